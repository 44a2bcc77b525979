#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/activation_lab.hpp"
#include "steerlab/corpus.hpp"
#include "steerlab/eval.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/trainer.hpp"

namespace steerlab {

struct ProbeConfig {
    std::optional<double> lambda;   // default: trace rule
    double holdout_fraction = 0.2;
    Pooling pooling = Pooling::MeanContent;
};

struct SweepSettings {
    SweepConfig grid;                 // alpha range/step, gen_length resolved in normalize()
    int samples_per_transition = 8;
};

struct EvalSettings {
    int n_per_transition = 20;
    int gen_length = 0;  // 0: seq_length - 1
    double temperature = 1.0;
    int top_k = 0;
    int keep_samples = 3;
    double proxy_holdout_fraction = 0.25;
    double proxy_accuracy_gate = 0.9;
    int proxy_iterations = 300;
};

// Whole-run configuration. One master seed; every stage derives its own
// stream from it.
struct RunConfig {
    std::uint64_t seed = 42;
    std::filesystem::path out_dir = "runs/default";
    VocabLayout vocab;
    CorpusConfig corpus;
    ModelConfig model;
    TrainConfig train;
    ProbeConfig probe;
    SweepSettings sweep;
    EvalSettings eval;
    std::vector<std::pair<int, int>> transitions;  // empty: the genre cycle
    RenormalizeMode renormalize = RenormalizeMode::Eq6Exact;

    // Applies derived defaults (vocab size, generation lengths, stage seeds)
    // and validates. Must be called before use; load_run_config does so.
    void normalize();
    std::vector<std::pair<int, int>> effective_transitions() const;
};

RunConfig default_run_config();  // desk scale: 900 samples/class, seq 128
RunConfig ci_run_config();       // reduced scale: 100 samples/class, seq 64

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const RunConfig& config, const std::filesystem::path& path);

// Stable hash of the normalized configuration; manifests record it to detect
// config drift between stages.
std::string config_hash(const RunConfig& config);

enum class Stage { GenCorpus, Train, Capture, Analyze, Probe, Sweep, Steer, Eval, Report };

std::string stage_name(Stage stage);
Stage stage_from_name(const std::string& name);
const std::vector<Stage>& all_stages();              // topological order
std::vector<Stage> stage_dependencies(Stage stage);  // direct predecessors
std::vector<std::string> stage_artifacts(Stage stage);

struct StageOutcome {
    Stage stage;
    bool skipped = false;  // already complete with matching config
};

class Pipeline {
public:
    explicit Pipeline(RunConfig config);

    // Runs one stage. Errors: MissingArtifactError when predecessors have not
    // run; ConfigError when the run directory was built under a different
    // config. Re-running a completed stage is a no-op unless force.
    StageOutcome run_stage(Stage stage, bool force = false);

    // Runs stages in order, optionally stopping after `until`. With force,
    // the manifest is reset and everything reruns.
    std::vector<StageOutcome> run_all(bool force = false,
                                      std::optional<Stage> until = std::nullopt);

    const RunConfig& config() const { return config_; }
    std::filesystem::path artifact(const std::string& filename) const;

private:
    RunConfig config_;
    std::string hash_;

    void execute(Stage stage);
    void gen_corpus_stage();
    void train_stage();
    void capture_stage();
    void analyze_stage();
    void probe_stage();
    void sweep_stage();
    void steer_stage();
    void eval_stage();
    void report_stage();
};

// Renders report.md plus probe_accuracy.csv and ari_nmi.csv from the
// artifacts already present in a run directory.
void render_report(const std::filesystem::path& run_dir);

}  // namespace steerlab
