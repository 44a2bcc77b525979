#include "steerlab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "steerlab/rng.hpp"

namespace steerlab {

using nlohmann::json;

std::vector<int> VocabLayout::non_content_ids() const {
    std::vector<int> ids;
    for (int id = n_content; id < vocab_size(); ++id) ids.push_back(id);
    return ids;
}

std::vector<int> VocabLayout::excluded_target_ids() const {
    std::vector<int> ids;
    for (int g = 0; g < n_genres; ++g) ids.push_back(genre_tag(g));
    ids.push_back(bos());
    return ids;
}

void VocabLayout::validate() const {
    if (n_content < 2 || n_genres < 2 || n_markers < 1)
        throw ConfigError("vocab: need >= 2 content tokens, >= 2 genres, >= 1 marker");
}

std::string split_name(Split s) {
    switch (s) {
        case Split::ModelTrain: return "model_train";
        case Split::ProbeTrain: return "probe_train";
        case Split::Eval: return "eval";
    }
    throw ConfigError("unknown split");
}

Split split_from_name(const std::string& name) {
    if (name == "model_train") return Split::ModelTrain;
    if (name == "probe_train") return Split::ProbeTrain;
    if (name == "eval") return Split::Eval;
    throw ConfigError("unknown split name: " + name);
}

void GenreSpec::validate(int n_content) const {
    if (tempo_period < 2) throw ConfigError("genre spec: tempo_period must be >= 2");
    if (transition.rows() != n_content || transition.cols() != n_content)
        throw ConfigError("genre spec: transition matrix shape mismatch");
    for (long i = 0; i < transition.rows(); ++i) {
        if (transition.row(i).minCoeff() < 0.0)
            throw ConfigError("genre spec: negative transition probability");
        if (std::abs(transition.row(i).sum() - 1.0) > 1e-9)
            throw ConfigError("genre spec: transition row " + std::to_string(i) +
                              " does not sum to 1");
    }
    for (int t : preferred_tokens)
        if (t < 0 || t >= n_content) throw ConfigError("genre spec: preferred token out of range");
}

std::vector<std::string> CorpusConfig::effective_genre_names() const {
    if (!genre_names.empty()) return genre_names;
    if (n_genres == 4) return {"classical", "electronic", "jazz", "rock"};
    std::vector<std::string> names;
    for (int g = 0; g < n_genres; ++g) names.push_back("genre" + std::to_string(g));
    return names;
}

void CorpusConfig::validate() const {
    if (n_genres < 2) throw ConfigError("corpus: n_genres must be >= 2");
    if (samples_per_genre < 10) throw ConfigError("corpus: samples_per_genre must be >= 10");
    if (seq_length < 4) throw ConfigError("corpus: seq_length must be >= 4");
    if (tempo_period < 2) throw ConfigError("corpus: tempo_period must be >= 2");
    double total = split_fractions[0] + split_fractions[1] + split_fractions[2];
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("corpus: split fractions must sum to 1");
    for (double f : split_fractions)
        if (f < 0.0) throw ConfigError("corpus: negative split fraction");
    if (!genre_names.empty() && static_cast<int>(genre_names.size()) != n_genres)
        throw ConfigError("corpus: genre_names size must match n_genres");
}

std::vector<size_t> LabeledCorpus::split_indices(Split s) const {
    std::vector<size_t> idx;
    for (size_t i = 0; i < split.size(); ++i)
        if (split[i] == s) idx.push_back(i);
    return idx;
}

std::vector<TokenSequence> LabeledCorpus::split_sequences(Split s) const {
    std::vector<TokenSequence> out;
    for (size_t i : split_indices(s)) out.push_back(sequences[i]);
    return out;
}

Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& transition) {
    const long n = transition.rows();
    Eigen::RowVectorXd p = Eigen::RowVectorXd::Constant(n, 1.0 / static_cast<double>(n));
    for (int iter = 0; iter < 20000; ++iter) {
        Eigen::RowVectorXd next = p * transition;
        next /= next.sum();
        double change = (next - p).cwiseAbs().sum();
        p = next;
        if (change < 1e-13) break;
    }
    return p.transpose();
}

double tv_distance(const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    return 0.5 * (p - q).cwiseAbs().sum();
}

double tv_distance(const std::map<int, double>& p, const std::map<int, double>& q) {
    double acc = 0.0;
    for (const auto& [k, v] : p) {
        auto it = q.find(k);
        acc += std::abs(v - (it == q.end() ? 0.0 : it->second));
    }
    for (const auto& [k, v] : q)
        if (p.find(k) == p.end()) acc += std::abs(v);
    return 0.5 * acc;
}

void validate_genre_specs(const std::vector<GenreSpec>& specs, int n_content) {
    if (specs.size() < 2) throw ConfigError("genre specs: need at least two genres");
    std::vector<Eigen::VectorXd> stationary;
    for (const GenreSpec& spec : specs) {
        spec.validate(n_content);
        stationary.push_back(stationary_distribution(spec.transition));
    }
    for (size_t a = 0; a < specs.size(); ++a) {
        for (size_t b = a + 1; b < specs.size(); ++b) {
            double tv = tv_distance(stationary[a], stationary[b]);
            if (tv < 0.3)
                throw ConfigError("genre specs: genres " + std::to_string(a) + " and " +
                                  std::to_string(b) + " are not distinguishable (TV " +
                                  format_double(tv) + " < 0.3)");
        }
    }
}

std::vector<GenreSpec> default_genre_specs(const CorpusConfig& config, const VocabLayout& layout) {
    config.validate();
    layout.validate();
    const int n = layout.n_content;
    const int genres = config.n_genres;
    if (n < 4 * genres)
        throw ConfigError("genre specs: content vocabulary too small for " +
                          std::to_string(genres) + " distinguishable genres");

    auto names = config.effective_genre_names();
    std::vector<GenreSpec> specs;
    const int window = n / 2;  // preferred-subset size; adjacent genres overlap

    for (int g = 0; g < genres; ++g) {
        GenreSpec spec;
        spec.genre_id = g;
        spec.name = names[static_cast<size_t>(g)];
        spec.tempo_period = config.tempo_period;

        const int start = g * n / genres;
        std::vector<char> preferred(static_cast<size_t>(n), 0);
        for (int i = 0; i < window; ++i) {
            int token = (start + i) % n;
            preferred[static_cast<size_t>(token)] = 1;
            spec.preferred_tokens.push_back(token);
        }
        std::sort(spec.preferred_tokens.begin(), spec.preferred_tokens.end());

        // Row = mixture of a uniform floor, the preferred subset, and a short
        // circular drift window. The drift shift differs per genre so the
        // bigram dynamics carry genre signal beyond the unigram profile.
        const int shift = 3 + 2 * g;
        Rng rng(derive_seed(config.seed, "genre-spec", static_cast<std::uint64_t>(g)));
        spec.transition.resize(n, n);
        for (int i = 0; i < n; ++i) {
            Eigen::VectorXd row = Eigen::VectorXd::Constant(n, 0.10 / n);
            for (int j = 0; j < n; ++j)
                if (preferred[static_cast<size_t>(j)]) row[j] += 0.55 / window;
            for (int off = 0; off < 5; ++off) {
                int j = (i + shift + off) % n;
                row[j] += 0.35 / 5.0;
            }
            // mild seeded jitter; keeps rows strictly positive
            for (int j = 0; j < n; ++j) row[j] *= std::exp(0.05 * rng.normal());
            spec.transition.row(i) = row.transpose() / row.sum();
        }
        specs.push_back(std::move(spec));
    }

    validate_genre_specs(specs, n);
    return specs;
}

namespace {

int sample_from_distribution(const Eigen::VectorXd& probs, Rng& rng) {
    double u = rng.uniform01();
    double acc = 0.0;
    for (long i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(probs.size() - 1);
}

// Largest-remainder split counts; exact for exact fractions.
std::array<int, 3> split_counts(const std::array<double, 3>& fractions, int total) {
    std::array<int, 3> counts{};
    std::array<double, 3> remainder{};
    int assigned = 0;
    for (int s = 0; s < 3; ++s) {
        double exact = fractions[static_cast<size_t>(s)] * total;
        counts[static_cast<size_t>(s)] = static_cast<int>(std::floor(exact + 1e-9));
        remainder[static_cast<size_t>(s)] = exact - counts[static_cast<size_t>(s)];
        assigned += counts[static_cast<size_t>(s)];
    }
    while (assigned < total) {
        int best = 0;
        for (int s = 1; s < 3; ++s)
            if (remainder[static_cast<size_t>(s)] > remainder[static_cast<size_t>(best)] + 1e-12)
                best = s;
        counts[static_cast<size_t>(best)] += 1;
        remainder[static_cast<size_t>(best)] = -1.0;
        ++assigned;
    }
    return counts;
}

}  // namespace

LabeledCorpus gen_corpus(const CorpusConfig& config, const std::vector<GenreSpec>& specs,
                         const VocabLayout& layout) {
    config.validate();
    layout.validate();
    if (static_cast<int>(specs.size()) != config.n_genres)
        throw ConfigError("gen_corpus: spec count does not match n_genres");
    if (config.n_genres > layout.n_genres)
        throw ConfigError("gen_corpus: vocab layout has too few genre tags");
    validate_genre_specs(specs, layout.n_content);

    LabeledCorpus corpus;
    const int per_genre = config.samples_per_genre;
    auto counts = split_counts(config.split_fractions, per_genre);

    for (int g = 0; g < config.n_genres; ++g) {
        const GenreSpec& spec = specs[static_cast<size_t>(g)];
        Eigen::VectorXd stationary = stationary_distribution(spec.transition);

        // stratified split assignment, shuffled per genre
        std::vector<Split> assignment;
        assignment.insert(assignment.end(), static_cast<size_t>(counts[0]), Split::ModelTrain);
        assignment.insert(assignment.end(), static_cast<size_t>(counts[1]), Split::ProbeTrain);
        assignment.insert(assignment.end(), static_cast<size_t>(counts[2]), Split::Eval);
        Rng split_rng(derive_seed(config.seed, "split", static_cast<std::uint64_t>(g)));
        split_rng.shuffle(assignment);

        for (int s = 0; s < per_genre; ++s) {
            Rng rng(derive_seed(config.seed, "sample",
                                static_cast<std::uint64_t>(g) * static_cast<std::uint64_t>(per_genre) +
                                    static_cast<std::uint64_t>(s)));
            TokenSequence seq;
            seq.genre_label = g;
            seq.tokens.reserve(static_cast<size_t>(config.seq_length));
            seq.tokens.push_back(layout.genre_tag(g));

            int state = sample_from_distribution(stationary, rng);
            bool state_emitted = false;
            for (int pos = 1; pos < config.seq_length; ++pos) {
                if (pos % spec.tempo_period == 0) {
                    seq.tokens.push_back(layout.marker(rng.index(layout.n_markers)));
                    continue;
                }
                if (state_emitted)
                    state = sample_from_distribution(spec.transition.row(state).transpose(), rng);
                seq.tokens.push_back(state);
                state_emitted = true;
            }
            corpus.sequences.push_back(std::move(seq));
            corpus.split.push_back(assignment[static_cast<size_t>(s)]);
        }
    }
    return corpus;
}

std::map<int, double> tempo_histogram(const TokenSequence& seq, const VocabLayout& layout) {
    std::vector<int> positions;
    for (int i = 0; i < seq.length(); ++i)
        if (layout.is_marker(seq.tokens[static_cast<size_t>(i)])) positions.push_back(i);
    std::map<int, double> hist;
    if (positions.size() < 2) return hist;  // undefined
    for (size_t i = 1; i < positions.size(); ++i)
        hist[positions[i] - positions[i - 1]] += 1.0;
    double total = static_cast<double>(positions.size() - 1);
    for (auto& [gap, count] : hist) count /= total;
    return hist;
}

double histogram_entropy(const std::map<int, double>& hist) {
    double h = 0.0;
    for (const auto& [gap, p] : hist)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

void save_corpus_jsonl(const LabeledCorpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (size_t i = 0; i < corpus.sequences.size(); ++i) {
        json line;
        line["tokens"] = corpus.sequences[i].tokens;
        line["genre"] = corpus.sequences[i].genre_label.value_or(-1);
        line["split"] = split_name(corpus.split[i]);
        out << line.dump() << "\n";
    }
}

LabeledCorpus load_corpus_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    LabeledCorpus corpus;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json obj = json::parse(line);
        TokenSequence seq;
        seq.tokens = obj.at("tokens").get<std::vector<int>>();
        int genre = obj.at("genre").get<int>();
        if (genre >= 0) seq.genre_label = genre;
        corpus.sequences.push_back(std::move(seq));
        corpus.split.push_back(split_from_name(obj.at("split").get<std::string>()));
    }
    return corpus;
}

void save_genre_specs(const std::vector<GenreSpec>& specs, const std::filesystem::path& path) {
    json out = json::array();
    for (const GenreSpec& spec : specs) {
        json entry;
        entry["genre_id"] = spec.genre_id;
        entry["name"] = spec.name;
        entry["tempo_period"] = spec.tempo_period;
        entry["preferred_tokens"] = spec.preferred_tokens;
        std::vector<std::vector<double>> rows;
        for (long i = 0; i < spec.transition.rows(); ++i) {
            std::vector<double> row(static_cast<size_t>(spec.transition.cols()));
            for (long j = 0; j < spec.transition.cols(); ++j)
                row[static_cast<size_t>(j)] = spec.transition(i, j);
            rows.push_back(std::move(row));
        }
        entry["transition"] = rows;
        out.push_back(std::move(entry));
    }
    std::ofstream file(path);
    if (!file) throw IoError("cannot write " + path.string());
    file << out.dump(2) << "\n";
}

std::vector<GenreSpec> load_genre_specs(const std::filesystem::path& path) {
    std::ifstream file(path);
    if (!file) throw IoError("cannot read " + path.string());
    json in = json::parse(file);
    std::vector<GenreSpec> specs;
    for (const json& entry : in) {
        GenreSpec spec;
        spec.genre_id = entry.at("genre_id").get<int>();
        spec.name = entry.at("name").get<std::string>();
        spec.tempo_period = entry.at("tempo_period").get<int>();
        spec.preferred_tokens = entry.at("preferred_tokens").get<std::vector<int>>();
        auto rows = entry.at("transition").get<std::vector<std::vector<double>>>();
        long n = static_cast<long>(rows.size());
        spec.transition.resize(n, n);
        for (long i = 0; i < n; ++i) {
            if (static_cast<long>(rows[static_cast<size_t>(i)].size()) != n)
                throw IoError("genre specs: ragged transition matrix");
            for (long j = 0; j < n; ++j)
                spec.transition(i, j) = rows[static_cast<size_t>(i)][static_cast<size_t>(j)];
        }
        specs.push_back(std::move(spec));
    }
    return specs;
}

}  // namespace steerlab
