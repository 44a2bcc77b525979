#include "steerlab/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "steerlab/rng.hpp"

namespace steerlab {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- run config

namespace {

json run_config_to_json(const RunConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["vocab"] = {{"content", c.vocab.n_content}, {"markers", c.vocab.n_markers}};
    j["corpus"] = {{"n_genres", c.corpus.n_genres},
                   {"samples_per_genre", c.corpus.samples_per_genre},
                   {"seq_length", c.corpus.seq_length},
                   {"tempo_period", c.corpus.tempo_period},
                   {"split_fractions", c.corpus.split_fractions},
                   {"genre_names", c.corpus.genre_names}};
    j["model"] = {{"d_model", c.model.d_model},
                  {"n_layers", c.model.n_layers},
                  {"n_heads", c.model.n_heads},
                  {"d_mlp", c.model.d_mlp},
                  {"max_context", c.model.max_context}};
    j["train"] = {{"learning_rate", c.train.learning_rate},
                  {"beta1", c.train.beta1},
                  {"beta2", c.train.beta2},
                  {"adam_eps", c.train.adam_eps},
                  {"batch_size", c.train.batch_size},
                  {"steps", c.train.steps},
                  {"log_every", c.train.log_every}};
    if (c.train.grad_clip) j["train"]["grad_clip"] = *c.train.grad_clip;
    j["probe"] = {{"holdout_fraction", c.probe.holdout_fraction},
                  {"pooling", pooling_name(c.probe.pooling)}};
    if (c.probe.lambda) j["probe"]["lambda"] = *c.probe.lambda;
    j["sweep"] = {{"alpha_min", c.sweep.grid.alpha_min},
                  {"alpha_max", c.sweep.grid.alpha_max},
                  {"alpha_step", c.sweep.grid.alpha_step},
                  {"seeds_per_prefix", c.sweep.grid.seeds_per_prefix},
                  {"gen_length", c.sweep.grid.gen_length},
                  {"samples_per_transition", c.sweep.samples_per_transition}};
    j["eval"] = {{"n_per_transition", c.eval.n_per_transition},
                 {"gen_length", c.eval.gen_length},
                 {"temperature", c.eval.temperature},
                 {"top_k", c.eval.top_k},
                 {"keep_samples", c.eval.keep_samples},
                 {"proxy_holdout_fraction", c.eval.proxy_holdout_fraction},
                 {"proxy_accuracy_gate", c.eval.proxy_accuracy_gate},
                 {"proxy_iterations", c.eval.proxy_iterations}};
    json transitions = json::array();
    for (auto [s, t] : c.transitions) transitions.push_back({s, t});
    j["transitions"] = std::move(transitions);
    j["renormalize_mode"] = renormalize_mode_name(c.renormalize);
    return j;
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    maybe(j, "seed", c.seed);
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("vocab")) {
        maybe(j.at("vocab"), "content", c.vocab.n_content);
        maybe(j.at("vocab"), "markers", c.vocab.n_markers);
    }
    if (j.contains("corpus")) {
        const json& s = j.at("corpus");
        maybe(s, "n_genres", c.corpus.n_genres);
        maybe(s, "samples_per_genre", c.corpus.samples_per_genre);
        maybe(s, "seq_length", c.corpus.seq_length);
        maybe(s, "tempo_period", c.corpus.tempo_period);
        maybe(s, "split_fractions", c.corpus.split_fractions);
        maybe(s, "genre_names", c.corpus.genre_names);
    }
    if (j.contains("model")) {
        const json& s = j.at("model");
        maybe(s, "d_model", c.model.d_model);
        maybe(s, "n_layers", c.model.n_layers);
        maybe(s, "n_heads", c.model.n_heads);
        maybe(s, "d_mlp", c.model.d_mlp);
        maybe(s, "max_context", c.model.max_context);
    }
    if (j.contains("train")) {
        const json& s = j.at("train");
        maybe(s, "learning_rate", c.train.learning_rate);
        maybe(s, "beta1", c.train.beta1);
        maybe(s, "beta2", c.train.beta2);
        maybe(s, "adam_eps", c.train.adam_eps);
        maybe(s, "batch_size", c.train.batch_size);
        maybe(s, "steps", c.train.steps);
        maybe(s, "log_every", c.train.log_every);
        if (s.contains("grad_clip") && !s.at("grad_clip").is_null())
            c.train.grad_clip = s.at("grad_clip").get<double>();
    }
    if (j.contains("probe")) {
        const json& s = j.at("probe");
        if (s.contains("lambda") && !s.at("lambda").is_null())
            c.probe.lambda = s.at("lambda").get<double>();
        maybe(s, "holdout_fraction", c.probe.holdout_fraction);
        if (s.contains("pooling")) c.probe.pooling = pooling_from_name(s.at("pooling"));
    }
    if (j.contains("sweep")) {
        const json& s = j.at("sweep");
        maybe(s, "alpha_min", c.sweep.grid.alpha_min);
        maybe(s, "alpha_max", c.sweep.grid.alpha_max);
        maybe(s, "alpha_step", c.sweep.grid.alpha_step);
        maybe(s, "seeds_per_prefix", c.sweep.grid.seeds_per_prefix);
        maybe(s, "gen_length", c.sweep.grid.gen_length);
        maybe(s, "samples_per_transition", c.sweep.samples_per_transition);
    }
    if (j.contains("eval")) {
        const json& s = j.at("eval");
        maybe(s, "n_per_transition", c.eval.n_per_transition);
        maybe(s, "gen_length", c.eval.gen_length);
        maybe(s, "temperature", c.eval.temperature);
        maybe(s, "top_k", c.eval.top_k);
        maybe(s, "keep_samples", c.eval.keep_samples);
        maybe(s, "proxy_holdout_fraction", c.eval.proxy_holdout_fraction);
        maybe(s, "proxy_accuracy_gate", c.eval.proxy_accuracy_gate);
        maybe(s, "proxy_iterations", c.eval.proxy_iterations);
    }
    if (j.contains("transitions")) {
        for (const json& t : j.at("transitions")) {
            if (!t.is_array() || t.size() != 2)
                throw ConfigError("config: each transition must be a [source, target] pair");
            c.transitions.emplace_back(t[0].get<int>(), t[1].get<int>());
        }
    }
    if (j.contains("renormalize_mode"))
        c.renormalize = renormalize_mode_from_name(j.at("renormalize_mode"));
    return c;
}

}  // namespace

void RunConfig::normalize() {
    vocab.n_genres = corpus.n_genres;
    vocab.validate();
    corpus.validate();

    model.vocab_size = vocab.vocab_size();
    model.seed = derive_seed(seed, "model-init");
    corpus.seed = derive_seed(seed, "corpus");
    train.seed = derive_seed(seed, "train");

    if (eval.gen_length <= 0) eval.gen_length = corpus.seq_length - 1;
    if (sweep.grid.gen_length <= 0) sweep.grid.gen_length = corpus.seq_length - 1;
    if (model.max_context <= 0)
        model.max_context =
            std::max({corpus.seq_length, eval.gen_length + 1, sweep.grid.gen_length + 1});

    model.validate();
    train.validate();
    sweep.grid.validate();
    if (sweep.samples_per_transition < 1)
        throw ConfigError("config: sweep.samples_per_transition must be >= 1");
    if (eval.n_per_transition < 1) throw ConfigError("config: eval.n_per_transition must be >= 1");
    if (eval.keep_samples < 0) throw ConfigError("config: eval.keep_samples must be >= 0");
    if (eval.temperature < 0.0) throw ConfigError("config: eval.temperature must be >= 0");
    if (probe.holdout_fraction < 0.0 || probe.holdout_fraction >= 1.0)
        throw ConfigError("config: probe.holdout_fraction must lie in [0, 1)");

    if (model.max_context < corpus.seq_length)
        throw ConfigError("config: max_context smaller than corpus seq_length");
    if (model.max_context < eval.gen_length + 1 || model.max_context < sweep.grid.gen_length + 1)
        throw ConfigError("config: max_context too small for generation length");

    for (auto [s, t] : effective_transitions()) {
        if (s < 0 || s >= corpus.n_genres || t < 0 || t >= corpus.n_genres)
            throw ConfigError("config: transition genre out of range");
        if (s == t) throw ConfigError("config: transition source equals target");
    }
}

std::vector<std::pair<int, int>> RunConfig::effective_transitions() const {
    if (!transitions.empty()) return transitions;
    std::vector<std::pair<int, int>> cycle;
    for (int g = 0; g < corpus.n_genres; ++g)
        cycle.emplace_back(g, (g + 1) % corpus.n_genres);
    return cycle;
}

RunConfig default_run_config() {
    RunConfig c;
    c.seed = 42;
    c.out_dir = "runs/default";
    c.vocab.n_content = 64;
    c.vocab.n_markers = 4;
    c.corpus.n_genres = 4;
    c.corpus.samples_per_genre = 900;
    c.corpus.seq_length = 128;
    c.corpus.tempo_period = 8;
    c.corpus.split_fractions = {0.8, 0.1, 0.1};
    c.model.d_model = 64;
    c.model.n_layers = 4;
    c.model.n_heads = 4;
    c.model.d_mlp = 256;
    c.train.learning_rate = 3e-3;
    c.train.batch_size = 32;
    c.train.steps = 2000;
    c.train.grad_clip = 1.0;
    c.train.log_every = 50;
    c.normalize();
    return c;
}

RunConfig ci_run_config() {
    RunConfig c = default_run_config();
    c.out_dir = "runs/ci";
    c.corpus.samples_per_genre = 100;
    c.corpus.seq_length = 64;
    c.corpus.split_fractions = {0.6, 0.2, 0.2};
    c.train.steps = 700;
    c.eval.gen_length = 0;
    c.sweep.grid.gen_length = 0;
    c.model.max_context = 0;
    c.normalize();
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    RunConfig c = run_config_from_json(j);
    c.normalize();
    return c;
}

void save_run_config(const RunConfig& config, const fs::path& path) {
    json j = run_config_to_json(config);
    j["out_dir"] = config.out_dir.string();
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

std::string config_hash(const RunConfig& config) {
    // out_dir excluded: the same experiment in two directories is the same run
    return to_hex(fnv1a64(run_config_to_json(config).dump()));
}

// -------------------------------------------------------------------- stages

std::string stage_name(Stage stage) {
    switch (stage) {
        case Stage::GenCorpus: return "gen-corpus";
        case Stage::Train: return "train";
        case Stage::Capture: return "capture";
        case Stage::Analyze: return "analyze";
        case Stage::Probe: return "probe";
        case Stage::Sweep: return "sweep";
        case Stage::Steer: return "steer";
        case Stage::Eval: return "eval";
        case Stage::Report: return "report";
    }
    throw ConfigError("unknown stage");
}

Stage stage_from_name(const std::string& name) {
    for (Stage stage : all_stages())
        if (stage_name(stage) == name) return stage;
    throw ConfigError("unknown stage name: " + name);
}

const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> stages = {Stage::GenCorpus, Stage::Train, Stage::Capture,
                                              Stage::Analyze,   Stage::Probe, Stage::Sweep,
                                              Stage::Steer,     Stage::Eval,  Stage::Report};
    return stages;
}

std::vector<Stage> stage_dependencies(Stage stage) {
    switch (stage) {
        case Stage::GenCorpus: return {};
        case Stage::Train: return {Stage::GenCorpus};
        case Stage::Capture: return {Stage::Train};
        case Stage::Analyze: return {Stage::Capture};
        case Stage::Probe: return {Stage::Capture};
        case Stage::Sweep: return {Stage::Probe};
        case Stage::Steer: return {Stage::Sweep};
        case Stage::Eval: return {Stage::Sweep};
        case Stage::Report: return {Stage::Analyze, Stage::Probe, Stage::Sweep, Stage::Eval};
    }
    throw ConfigError("unknown stage");
}

std::vector<std::string> stage_artifacts(Stage stage) {
    switch (stage) {
        case Stage::GenCorpus: return {"corpus.jsonl", "genre_specs.json"};
        case Stage::Train:
            return {"model.json", "weights.bin", "train_report.json", "loss_curve.csv"};
        case Stage::Capture: return {"activations.bin", "activations.json"};
        case Stage::Analyze: return {"cluster_report.json", "jaccard.csv"};
        case Stage::Probe: return {"probes.json"};
        case Stage::Sweep: return {"proxy.json", "sweep.csv", "sweep.json"};
        case Stage::Steer: return {"steered_samples.jsonl"};
        case Stage::Eval: return {"transitions.csv", "eval_report.json"};
        case Stage::Report: return {"report.md", "probe_accuracy.csv", "ari_nmi.csv"};
    }
    throw ConfigError("unknown stage");
}

// ------------------------------------------------------------------ manifest

namespace {

struct Manifest {
    std::string tool_version;
    std::string hash;
    std::map<std::string, std::vector<std::string>> stages;  // name -> artifacts

    bool done(Stage stage) const { return stages.count(stage_name(stage)) > 0; }
};

fs::path manifest_path(const fs::path& dir) { return dir / "manifest.json"; }

std::optional<Manifest> load_manifest(const fs::path& dir) {
    fs::path path = manifest_path(dir);
    std::ifstream in(path);
    if (!in) return std::nullopt;
    json j = json::parse(in);
    Manifest m;
    m.tool_version = j.at("tool_version").get<std::string>();
    m.hash = j.at("config_hash").get<std::string>();
    for (const auto& [name, entry] : j.at("stages").items())
        m.stages[name] = entry.at("artifacts").get<std::vector<std::string>>();
    return m;
}

void save_manifest(const fs::path& dir, const Manifest& m) {
    json j;
    j["tool_version"] = m.tool_version;
    j["config_hash"] = m.hash;
    json stages = json::object();
    for (const auto& [name, artifacts] : m.stages)
        stages[name] = {{"done", true}, {"artifacts", artifacts}};
    j["stages"] = std::move(stages);
    std::ofstream out(manifest_path(dir));
    if (!out) throw IoError("cannot write " + manifest_path(dir).string());
    out << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

json load_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    return json::parse(in);
}

void save_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<double> to_vector(const Eigen::VectorXd& v) {
    return {v.data(), v.data() + v.size()};
}

json matrix_to_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (long i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (long j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
    long rows = static_cast<long>(j.size());
    long cols = rows == 0 ? 0 : static_cast<long>(j[0].size());
    Eigen::MatrixXd m(rows, cols);
    for (long i = 0; i < rows; ++i)
        for (long c = 0; c < cols; ++c)
            m(i, c) = j[static_cast<size_t>(i)][static_cast<size_t>(c)].get<double>();
    return m;
}

}  // namespace

// ------------------------------------------------------------------ pipeline

Pipeline::Pipeline(RunConfig config) : config_(std::move(config)) {
    config_.normalize();
    hash_ = config_hash(config_);
}

fs::path Pipeline::artifact(const std::string& filename) const {
    return config_.out_dir / filename;
}

StageOutcome Pipeline::run_stage(Stage stage, bool force) {
    fs::create_directories(config_.out_dir);
    std::optional<Manifest> manifest = load_manifest(config_.out_dir);

    if (manifest && manifest->hash != hash_ && !manifest->stages.empty()) {
        std::string stale;
        for (const auto& [name, artifacts] : manifest->stages)
            stale += (stale.empty() ? "" : ", ") + name;
        throw ConfigError("config drift: stages [" + stale +
                          "] were built under config hash " + manifest->hash +
                          " but the current config hashes to " + hash_ +
                          "; use a fresh output directory or `run-all --force`");
    }

    for (Stage dep : stage_dependencies(stage)) {
        bool have = manifest && manifest->done(dep);
        if (have)
            for (const std::string& a : stage_artifacts(dep))
                if (!fs::exists(artifact(a))) have = false;
        if (!have)
            throw MissingArtifactError("stage '" + stage_name(stage) + "' requires '" +
                                       stage_name(dep) + "' to have run first");
    }

    if (!force && manifest && manifest->done(stage)) {
        bool complete = true;
        for (const std::string& a : stage_artifacts(stage))
            if (!fs::exists(artifact(a))) complete = false;
        if (complete) return {stage, true};
    }

    execute(stage);

    Manifest m = manifest.value_or(Manifest{});
    m.tool_version = std::string(kVersion);
    m.hash = hash_;
    m.stages[stage_name(stage)] = stage_artifacts(stage);
    save_manifest(config_.out_dir, m);
    return {stage, false};
}

std::vector<StageOutcome> Pipeline::run_all(bool force, std::optional<Stage> until) {
    if (force) fs::remove(manifest_path(config_.out_dir));
    std::vector<StageOutcome> outcomes;
    for (Stage stage : all_stages()) {
        outcomes.push_back(run_stage(stage, force));
        if (until && *until == stage) break;
    }
    return outcomes;
}

void Pipeline::execute(Stage stage) {
    switch (stage) {
        case Stage::GenCorpus: gen_corpus_stage(); return;
        case Stage::Train: train_stage(); return;
        case Stage::Capture: capture_stage(); return;
        case Stage::Analyze: analyze_stage(); return;
        case Stage::Probe: probe_stage(); return;
        case Stage::Sweep: sweep_stage(); return;
        case Stage::Steer: steer_stage(); return;
        case Stage::Eval: eval_stage(); return;
        case Stage::Report: report_stage(); return;
    }
}

void Pipeline::gen_corpus_stage() {
    auto specs = default_genre_specs(config_.corpus, config_.vocab);
    LabeledCorpus corpus = gen_corpus(config_.corpus, specs, config_.vocab);
    save_corpus_jsonl(corpus, artifact("corpus.jsonl"));
    save_genre_specs(specs, artifact("genre_specs.json"));
}

void Pipeline::train_stage() {
    LabeledCorpus corpus = load_corpus_jsonl(artifact("corpus.jsonl"));
    auto train_seqs = corpus.split_sequences(Split::ModelTrain);
    auto heldout_seqs = corpus.split_sequences(Split::ProbeTrain);
    auto [params, report] = train(config_.train, config_.model, train_seqs, heldout_seqs,
                                  config_.vocab.excluded_target_ids());
    save_model(params, artifact("model.json"), artifact("weights.bin"));

    json tr;
    tr["heldout_perplexity"] = report.heldout_perplexity;
    json curve = json::array();
    for (auto [step, loss] : report.loss_curve) curve.push_back({step, loss});
    tr["loss_curve"] = std::move(curve);
    save_json(artifact("train_report.json"), tr);

    std::string csv = "step,loss\n";
    for (auto [step, loss] : report.loss_curve)
        csv += std::to_string(step) + "," + format_double(loss) + "\n";
    write_text(artifact("loss_curve.csv"), csv);
}

void Pipeline::capture_stage() {
    ModelParams params = load_model(artifact("model.json"), artifact("weights.bin"));
    LabeledCorpus corpus = load_corpus_jsonl(artifact("corpus.jsonl"));
    auto probe_seqs = corpus.split_sequences(Split::ProbeTrain);
    ActivationDataset data =
        capture(params, probe_seqs, config_.probe.pooling, config_.vocab.non_content_ids());
    save_activations(data, artifact("activations.bin"), artifact("activations.json"));
}

void Pipeline::analyze_stage() {
    ActivationDataset data =
        load_activations(artifact("activations.bin"), artifact("activations.json"));
    ClusterReport report =
        analyze_clusters(data, config_.corpus.n_genres, derive_seed(config_.seed, "analyze"));

    json j;
    j["k"] = report.k;
    j["best_layer"] = report.best_layer;
    j["ari_per_layer"] = report.ari_per_layer;
    j["nmi_per_layer"] = report.nmi_per_layer;
    save_json(artifact("cluster_report.json"), j);

    std::string csv = "genre";
    for (long c = 0; c < report.jaccard.cols(); ++c) csv += ",cluster_" + std::to_string(c);
    csv += "\n";
    for (long g = 0; g < report.jaccard.rows(); ++g) {
        csv += std::to_string(g);
        for (long c = 0; c < report.jaccard.cols(); ++c)
            csv += "," + format_double(report.jaccard(g, c));
        csv += "\n";
    }
    write_text(artifact("jaccard.csv"), csv);
}

void Pipeline::probe_stage() {
    ActivationDataset data =
        load_activations(artifact("activations.bin"), artifact("activations.json"));
    const int genres = config_.corpus.n_genres;

    ProbeOptions options;
    options.lambda = config_.probe.lambda;
    options.holdout_fraction = config_.probe.holdout_fraction;

    std::vector<ProbeModel> multi;
    for (int layer = 0; layer < data.layer_count(); ++layer) {
        options.seed = derive_seed(config_.seed, "probe-multi", static_cast<std::uint64_t>(layer));
        multi.push_back(train_layer_multi_probe(data, layer, genres, options));
    }
    int best = best_layer(multi);

    json j;
    j["pooling"] = pooling_name(data.pooling);
    j["n_layers"] = data.layer_count();
    j["best_layer"] = best;
    json multi_json = json::array();
    for (const ProbeModel& probe : multi)
        multi_json.push_back({{"layer", probe.layer},
                              {"train_accuracy", probe.train_accuracy},
                              {"heldout_accuracy", probe.heldout_accuracy},
                              {"lambda", probe.lambda}});
    j["multi"] = std::move(multi_json);

    json pairs = json::array();
    std::uint64_t pair_index = 0;
    for (int g0 = 0; g0 < genres; ++g0) {
        for (int g1 = g0 + 1; g1 < genres; ++g1) {
            for (int layer = 0; layer < data.layer_count(); ++layer) {
                options.seed = derive_seed(config_.seed, "probe-pair", pair_index++);
                ProbeModel probe = train_pair_probe(data, layer, g0, g1, options);
                pairs.push_back({{"genre0", g0},
                                 {"genre1", g1},
                                 {"layer", layer},
                                 {"train_accuracy", probe.train_accuracy},
                                 {"heldout_accuracy", probe.heldout_accuracy},
                                 {"lambda", probe.lambda},
                                 {"weights", to_vector(probe.weights.col(0))},
                                 {"bias", probe.bias[0]}});
            }
        }
    }
    j["pairs"] = std::move(pairs);
    save_json(artifact("probes.json"), j);
}

namespace {

struct StoredPairProbe {
    Eigen::VectorXd weights;
    double bias = 0.0;
    double heldout_accuracy = 0.0;
};

// pair probes at one layer, keyed by (genre0, genre1) with genre0 < genre1
std::map<std::pair<int, int>, StoredPairProbe> pair_probes_at_layer(const json& probes,
                                                                    int layer) {
    std::map<std::pair<int, int>, StoredPairProbe> out;
    for (const json& p : probes.at("pairs")) {
        if (p.at("layer").get<int>() != layer) continue;
        StoredPairProbe stored;
        auto w = p.at("weights").get<std::vector<double>>();
        stored.weights = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<long>(w.size()));
        stored.bias = p.at("bias").get<double>();
        stored.heldout_accuracy = p.at("heldout_accuracy").get<double>();
        out[{p.at("genre0").get<int>(), p.at("genre1").get<int>()}] = std::move(stored);
    }
    return out;
}

// unit steering direction for source -> target from the stored pair probe
Eigen::VectorXd stored_direction(const std::map<std::pair<int, int>, StoredPairProbe>& probes,
                                 int source, int target) {
    auto key = std::make_pair(std::min(source, target), std::max(source, target));
    auto it = probes.find(key);
    if (it == probes.end())
        throw MissingArtifactError("probes.json lacks pair (" + std::to_string(key.first) + "," +
                                   std::to_string(key.second) + ")");
    double norm = it->second.weights.norm();
    if (norm <= 0.0) throw NumericError("stored pair probe has zero weights");
    Eigen::VectorXd r = it->second.weights / norm;
    // probe targets are 1 for genre1; flip when steering toward genre0
    return target == key.second ? r : Eigen::VectorXd(-r);
}

ProxyScorer load_proxy(const json& j) {
    ProxyScorer scorer;
    scorer.n_content = j.at("n_content").get<int>();
    scorer.strip_ids = j.at("strip_ids").get<std::vector<int>>();
    scorer.n_genres = j.at("n_genres").get<int>();
    scorer.train_accuracy = j.at("train_accuracy").get<double>();
    scorer.heldout_accuracy = j.at("heldout_accuracy").get<double>();
    scorer.weights = matrix_from_json(j.at("weights"));
    auto b = j.at("bias").get<std::vector<double>>();
    scorer.bias = Eigen::Map<Eigen::VectorXd>(b.data(), static_cast<long>(b.size()));
    return scorer;
}

json proxy_to_json(const ProxyScorer& scorer) {
    json j;
    j["n_content"] = scorer.n_content;
    j["strip_ids"] = scorer.strip_ids;
    j["n_genres"] = scorer.n_genres;
    j["train_accuracy"] = scorer.train_accuracy;
    j["heldout_accuracy"] = scorer.heldout_accuracy;
    j["weights"] = matrix_to_json(scorer.weights);
    j["bias"] = to_vector(scorer.bias);
    return j;
}

std::string transition_label(const std::vector<std::string>& names, int source, int target) {
    return names.at(static_cast<size_t>(source)) + "->" + names.at(static_cast<size_t>(target));
}

std::vector<std::string> genre_names_from_specs(const fs::path& specs_path) {
    std::vector<std::string> names;
    for (const GenreSpec& spec : load_genre_specs(specs_path)) names.push_back(spec.name);
    return names;
}

}  // namespace

void Pipeline::sweep_stage() {
    ModelParams params = load_model(artifact("model.json"), artifact("weights.bin"));
    LabeledCorpus corpus = load_corpus_jsonl(artifact("corpus.jsonl"));
    json probes = load_json(artifact("probes.json"));
    auto names = genre_names_from_specs(artifact("genre_specs.json"));
    const int best = probes.at("best_layer").get<int>();
    // hooks act on layer inputs; the final entry is the output, not hookable
    const int steer_layer = std::min(best, config_.model.n_layers - 1);
    auto layer_probes = pair_probes_at_layer(probes, steer_layer);

    ProxyTrainOptions proxy_options;
    proxy_options.holdout_fraction = config_.eval.proxy_holdout_fraction;
    proxy_options.accuracy_gate = config_.eval.proxy_accuracy_gate;
    proxy_options.iterations = config_.eval.proxy_iterations;
    proxy_options.seed = derive_seed(config_.seed, "proxy");
    ProxyScorer proxy = train_proxy(corpus.split_sequences(Split::Eval), config_.corpus.n_genres,
                                    config_.vocab, proxy_options);
    save_json(artifact("proxy.json"), proxy_to_json(proxy));

    std::string csv = "alpha,transition,mean_delta,std_delta,n\n";
    json sweep_out;
    sweep_out["layer"] = steer_layer;
    json transitions_json = json::array();

    auto transitions = config_.effective_transitions();
    for (size_t t = 0; t < transitions.size(); ++t) {
        auto [source, target] = transitions[t];
        Eigen::VectorXd direction = stored_direction(layer_probes, source, target);

        std::vector<TokenSequence> prefixes(
            static_cast<size_t>(config_.sweep.samples_per_transition),
            TokenSequence{{config_.vocab.genre_tag(source)}, source});

        SamplingConfig sampling;
        sampling.temperature = config_.eval.temperature;
        sampling.top_k = config_.eval.top_k;
        sampling.seed = derive_seed(config_.seed, "sweep", static_cast<std::uint64_t>(t));

        SweepResult result = alpha_sweep(
            params, prefixes, direction, steer_layer, config_.sweep.grid, sampling,
            config_.renormalize, [&](const TokenSequence& orig, const TokenSequence& steered) {
                return delta_score(proxy, orig, steered, source, target);
            });

        std::string label = transition_label(names, source, target);
        for (const SweepPoint& p : result.points)
            csv += format_double(p.alpha) + "," + label + "," + format_double(p.mean_delta) +
                   "," + format_double(p.std_delta) + "," + std::to_string(p.n) + "\n";
        transitions_json.push_back({{"source", source},
                                    {"target", target},
                                    {"transition", label},
                                    {"best_alpha", result.best_alpha}});
    }
    sweep_out["transitions"] = std::move(transitions_json);
    write_text(artifact("sweep.csv"), csv);
    save_json(artifact("sweep.json"), sweep_out);
}

namespace {

struct PlannedTransition {
    int source = 0;
    int target = 0;
    double alpha = 0.0;
    int layer = 0;
    Eigen::VectorXd direction;
};

std::vector<PlannedTransition> planned_transitions(const json& sweep, const json& probes) {
    const int layer = sweep.at("layer").get<int>();
    auto layer_probes = pair_probes_at_layer(probes, layer);
    std::vector<PlannedTransition> out;
    for (const json& t : sweep.at("transitions")) {
        PlannedTransition planned;
        planned.source = t.at("source").get<int>();
        planned.target = t.at("target").get<int>();
        planned.alpha = t.at("best_alpha").get<double>();
        planned.layer = layer;
        planned.direction = stored_direction(layer_probes, planned.source, planned.target);
        out.push_back(std::move(planned));
    }
    return out;
}

}  // namespace

void Pipeline::steer_stage() {
    ModelParams params = load_model(artifact("model.json"), artifact("weights.bin"));
    auto names = genre_names_from_specs(artifact("genre_specs.json"));
    auto planned = planned_transitions(load_json(artifact("sweep.json")),
                                       load_json(artifact("probes.json")));

    std::ofstream out(artifact("steered_samples.jsonl"));
    if (!out) throw IoError("cannot write " + artifact("steered_samples.jsonl").string());

    const int keep = std::max(1, config_.eval.keep_samples);
    for (size_t t = 0; t < planned.size(); ++t) {
        const PlannedTransition& tr = planned[t];
        SteeringSpec spec;
        spec.direction = tr.direction;
        spec.layer = tr.layer;
        spec.alpha = tr.alpha;
        spec.mode = config_.renormalize;

        TokenSequence src_prefix{{config_.vocab.genre_tag(tr.source)}, tr.source};
        TokenSequence tgt_prefix{{config_.vocab.genre_tag(tr.target)}, tr.target};
        for (int i = 0; i < keep; ++i) {
            SamplingConfig sampling;
            sampling.temperature = config_.eval.temperature;
            sampling.top_k = config_.eval.top_k;
            sampling.seed = derive_seed(config_.seed, "steer-demo",
                                        static_cast<std::uint64_t>(t) * static_cast<std::uint64_t>(keep) +
                                            static_cast<std::uint64_t>(i));
            TokenSequence original = generate(params, src_prefix, config_.eval.gen_length, sampling);
            TokenSequence steered =
                steered_generate(params, src_prefix, spec, config_.eval.gen_length, sampling);
            TokenSequence prompted = generate(params, tgt_prefix, config_.eval.gen_length, sampling);

            json line;
            line["source"] = tr.source;
            line["target"] = tr.target;
            line["transition"] = transition_label(names, tr.source, tr.target);
            line["alpha"] = tr.alpha;
            line["original"] = original.tokens;
            line["steered"] = steered.tokens;
            line["prompted"] = prompted.tokens;
            out << line.dump() << "\n";
        }
    }
}

void Pipeline::eval_stage() {
    ModelParams params = load_model(artifact("model.json"), artifact("weights.bin"));
    auto names = genre_names_from_specs(artifact("genre_specs.json"));
    ProxyScorer proxy = load_proxy(load_json(artifact("proxy.json")));
    auto planned = planned_transitions(load_json(artifact("sweep.json")),
                                       load_json(artifact("probes.json")));

    std::vector<TransitionSpec> specs;
    for (const PlannedTransition& tr : planned) {
        TransitionSpec spec;
        spec.source = tr.source;
        spec.target = tr.target;
        spec.direction = tr.direction;
        spec.layer = tr.layer;
        spec.alpha = tr.alpha;
        specs.push_back(std::move(spec));
    }

    TransitionRunConfig run_config;
    run_config.n_per_transition = config_.eval.n_per_transition;
    run_config.gen_length = config_.eval.gen_length;
    run_config.sampling.temperature = config_.eval.temperature;
    run_config.sampling.top_k = config_.eval.top_k;
    run_config.sampling.seed = derive_seed(config_.seed, "eval");
    run_config.keep_samples = 0;

    TransitionRunResult result =
        run_transitions(params, specs, proxy, config_.vocab, names, run_config);

    std::string csv =
        "transition,condition,alpha,n,original_mean,original_std,modified_mean,modified_std,"
        "delta\n";
    json reports = json::array();
    for (const TransitionReport& r : result.reports) {
        std::string label = r.source_name + "->" + r.target_name;
        csv += label + "," + condition_name(r.condition) + "," +
               (r.alpha ? format_double(*r.alpha) : std::string()) + "," + std::to_string(r.n) +
               "," + format_double(r.original_mean) + "," + format_double(r.original_std) + "," +
               format_double(r.modified_mean) + "," + format_double(r.modified_std) + "," +
               format_double(r.delta) + "\n";
        json jr;
        jr["transition"] = label;
        jr["source"] = r.source_genre;
        jr["target"] = r.target_genre;
        jr["condition"] = condition_name(r.condition);
        if (r.alpha) jr["alpha"] = *r.alpha;
        jr["n"] = r.n;
        jr["original_mean"] = r.original_mean;
        jr["original_std"] = r.original_std;
        jr["modified_mean"] = r.modified_mean;
        jr["modified_std"] = r.modified_std;
        jr["delta"] = r.delta;
        reports.push_back(std::move(jr));
    }
    write_text(artifact("transitions.csv"), csv);

    json j;
    j["proxy"] = {{"train_accuracy", proxy.train_accuracy},
                  {"heldout_accuracy", proxy.heldout_accuracy}};
    j["reports"] = std::move(reports);
    json tempo = json::array();
    for (const TempoSummary& t : result.tempo)
        tempo.push_back({{"transition", transition_label(names, t.source, t.target)},
                         {"steered_tv_mean", t.steered_tv_mean},
                         {"prompted_tv_mean", t.prompted_tv_mean},
                         {"steered_defined", t.steered_defined},
                         {"prompted_defined", t.prompted_defined},
                         {"n", t.n}});
    j["tempo"] = std::move(tempo);
    save_json(artifact("eval_report.json"), j);
}

void Pipeline::report_stage() { render_report(config_.out_dir); }

// -------------------------------------------------------------------- report

void render_report(const fs::path& run_dir) {
    for (const char* needed : {"cluster_report.json", "probes.json", "sweep.json",
                               "eval_report.json", "train_report.json"})
        if (!fs::exists(run_dir / needed))
            throw MissingArtifactError(std::string("render_report: missing ") + needed);

    json cluster = load_json(run_dir / "cluster_report.json");
    json probes = load_json(run_dir / "probes.json");
    json sweep = load_json(run_dir / "sweep.json");
    json eval_report = load_json(run_dir / "eval_report.json");
    json train_report = load_json(run_dir / "train_report.json");
    std::optional<Manifest> manifest = load_manifest(run_dir);

    std::ostringstream md;
    md << "# steerlab run report\n\n";
    if (manifest)
        md << "tool " << manifest->tool_version << ", config hash `" << manifest->hash << "`\n\n";

    md << "## Genre transition scores (proxy scorer, target-genre score)\n\n";
    md << "| Transition | Condition | alpha | n | Original | Modified | Delta |\n";
    md << "|---|---|---|---|---|---|---|\n";
    for (const json& r : eval_report.at("reports")) {
        md << "| " << r.at("transition").get<std::string>() << " | "
           << r.at("condition").get<std::string>() << " | "
           << (r.contains("alpha") ? format_double(r.at("alpha").get<double>()) : std::string("-"))
           << " | " << r.at("n").get<int>() << " | "
           << format_double(r.at("original_mean").get<double>()) << " +- "
           << format_double(r.at("original_std").get<double>()) << " | "
           << format_double(r.at("modified_mean").get<double>()) << " +- "
           << format_double(r.at("modified_std").get<double>()) << " | "
           << format_double(r.at("delta").get<double>()) << " |\n";
    }

    md << "\n## Best steering strength per transition (layer "
       << sweep.at("layer").get<int>() << ")\n\n";
    md << "| Transition | best alpha |\n|---|---|\n";
    for (const json& t : sweep.at("transitions"))
        md << "| " << t.at("transition").get<std::string>() << " | "
           << format_double(t.at("best_alpha").get<double>()) << " |\n";

    md << "\n## Tempo preservation (mean TV distance of marker-gap histograms vs original)\n\n";
    md << "| Transition | steered | prompted | defined (steered/prompted of n) |\n";
    md << "|---|---|---|---|\n";
    for (const json& t : eval_report.at("tempo")) {
        md << "| " << t.at("transition").get<std::string>() << " | "
           << format_double(t.at("steered_tv_mean").get<double>()) << " | "
           << format_double(t.at("prompted_tv_mean").get<double>()) << " | "
           << t.at("steered_defined").get<int>() << "/" << t.at("prompted_defined").get<int>()
           << " of " << t.at("n").get<int>() << " |\n";
    }

    md << "\n## Probe accuracy by layer\n\n";
    md << "| Layer | multi held-out | multi train |\n|---|---|---|\n";
    std::string probe_csv = "layer,kind,genre0,genre1,train_accuracy,heldout_accuracy\n";
    for (const json& p : probes.at("multi")) {
        md << "| " << p.at("layer").get<int>() << " | "
           << format_double(p.at("heldout_accuracy").get<double>()) << " | "
           << format_double(p.at("train_accuracy").get<double>()) << " |\n";
        probe_csv += std::to_string(p.at("layer").get<int>()) + ",multi,,," +
                     format_double(p.at("train_accuracy").get<double>()) + "," +
                     format_double(p.at("heldout_accuracy").get<double>()) + "\n";
    }
    md << "\nbest probe layer: " << probes.at("best_layer").get<int>() << "\n";
    for (const json& p : probes.at("pairs"))
        probe_csv += std::to_string(p.at("layer").get<int>()) + ",pair," +
                     std::to_string(p.at("genre0").get<int>()) + "," +
                     std::to_string(p.at("genre1").get<int>()) + "," +
                     format_double(p.at("train_accuracy").get<double>()) + "," +
                     format_double(p.at("heldout_accuracy").get<double>()) + "\n";
    write_text(run_dir / "probe_accuracy.csv", probe_csv);

    md << "\n## Cluster agreement by layer (k = " << cluster.at("k").get<int>() << ")\n\n";
    md << "| Layer | ARI | NMI |\n|---|---|---|\n";
    std::string ari_csv = "layer,ari,nmi\n";
    auto aris = cluster.at("ari_per_layer").get<std::vector<double>>();
    auto nmis = cluster.at("nmi_per_layer").get<std::vector<double>>();
    for (size_t l = 0; l < aris.size(); ++l) {
        md << "| " << l << " | " << format_double(aris[l]) << " | " << format_double(nmis[l])
           << " |\n";
        ari_csv += std::to_string(l) + "," + format_double(aris[l]) + "," +
                   format_double(nmis[l]) + "\n";
    }
    write_text(run_dir / "ari_nmi.csv", ari_csv);
    md << "\nbest cluster layer (ARI): " << cluster.at("best_layer").get<int>()
       << "; Jaccard matrix at that layer: see `jaccard.csv`\n";

    md << "\n## Training\n\n";
    md << "held-out perplexity: "
       << format_double(train_report.at("heldout_perplexity").get<double>()) << "\n";
    md << "proxy scorer held-out accuracy: "
       << format_double(eval_report.at("proxy").at("heldout_accuracy").get<double>()) << "\n";

    write_text(run_dir / "report.md", md.str());
}

}  // namespace steerlab
