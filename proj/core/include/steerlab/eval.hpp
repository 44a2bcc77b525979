#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "steerlab/corpus.hpp"
#include "steerlab/model.hpp"

namespace steerlab {

// Zero-shot genre scorer independent of the steered transformer: multinomial
// logistic regression over unigram+bigram frequency features of the content
// tokens. Trained only on corpus data (the eval split), never on model output.
struct ProxyScorer {
    Eigen::MatrixXd weights;  // feature_dim x n_genres
    Eigen::VectorXd bias;     // n_genres
    int n_content = 0;
    std::vector<int> strip_ids;  // removed before featurization (tags, markers, BOS)
    int n_genres = 0;
    double train_accuracy = 0.0;
    double heldout_accuracy = 0.0;

    int feature_dim() const { return n_content + n_content * n_content; }
    Eigen::VectorXd features(const TokenSequence& seq) const;
    Eigen::VectorXd genre_logits(const TokenSequence& seq) const;
    int classify(const TokenSequence& seq) const;
};

struct ProxyTrainOptions {
    int iterations = 300;
    double learning_rate = 0.5;
    double l2 = 1e-4;
    double holdout_fraction = 0.25;
    std::uint64_t seed = 0;
    double accuracy_gate = 0.9;  // minimum held-out accuracy; NumericError below
};

ProxyScorer train_proxy(std::span<const TokenSequence> sequences, int n_genres,
                        const VocabLayout& layout, const ProxyTrainOptions& options);

// Two-way softmax over the scorer's logits restricted to {g1, g2};
// the two scores sum to 1.
std::pair<double, double> score(const ProxyScorer& scorer, const TokenSequence& seq, int g1,
                                int g2);

// score(steered, target) - score(original, target) with the {source, target}
// label set.
double delta_score(const ProxyScorer& scorer, const TokenSequence& original,
                   const TokenSequence& steered, int source, int target);

enum class Condition { Steered, Prompted };
std::string condition_name(Condition c);

struct TransitionReport {
    int source_genre = 0;
    int target_genre = 0;
    std::string source_name;
    std::string target_name;
    double original_mean = 0.0;
    double original_std = 0.0;
    double modified_mean = 0.0;
    double modified_std = 0.0;
    double delta = 0.0;  // modified_mean - original_mean
    Condition condition = Condition::Steered;
    int n = 0;
    std::optional<double> alpha;  // steered rows only
};

struct TempoPreservation {
    std::optional<double> steered_tv;   // undefined without >= 2 markers on both sides
    std::optional<double> prompted_tv;
};

// Total-variation distances between the original's inter-marker gap histogram
// and the steered / prompted ones. Reported, not asserted.
TempoPreservation tempo_preservation(const TokenSequence& original, const TokenSequence& steered,
                                     const TokenSequence& prompted, const VocabLayout& layout);

struct TransitionSpec {
    int source = 0;
    int target = 0;
    Eigen::VectorXd direction;  // unit steering vector toward the target
    int layer = 0;
    double alpha = 0.0;
};

struct TransitionRunConfig {
    int n_per_transition = 20;
    int gen_length = 64;
    SamplingConfig sampling;
    int keep_samples = 0;  // original/steered/prompted triples retained per transition
};

struct SampleTriple {
    int source = 0;
    int target = 0;
    TokenSequence original, steered, prompted;
};

struct TempoSummary {
    int source = 0;
    int target = 0;
    double steered_tv_mean = 0.0;
    double prompted_tv_mean = 0.0;
    int steered_defined = 0;
    int prompted_defined = 0;
    int n = 0;
};

struct TransitionRunResult {
    std::vector<TransitionReport> reports;  // one steered + one prompted row per transition
    std::vector<TempoSummary> tempo;
    std::vector<SampleTriple> samples;
};

// For each transition: N source-prompted originals, steered versions via the
// probe direction (same prefix and seed), and prompted versions via the
// target-genre tag prefix (same seed). Scores are against the target genre
// within the {source, target} label set.
TransitionRunResult run_transitions(const ModelParams& params,
                                    std::span<const TransitionSpec> transitions,
                                    const ProxyScorer& scorer, const VocabLayout& layout,
                                    const std::vector<std::string>& genre_names,
                                    const TransitionRunConfig& config);

enum class BinomTail { Greater, Less, TwoSided };

// Exact binomial tail probability. Greater: P(X >= k); Less: P(X <= k);
// TwoSided: min(1, 2 * min(lower, upper)). Exact coefficient arithmetic for
// n <= 50 (dyadic p0 gives exact results); log-space summation above.
double binom_test(long k, long n, double p0 = 0.5, BinomTail tail = BinomTail::Greater);

struct TwoAfcRecord {
    std::string participant_id;
    std::string group;       // "musician" | "general"
    std::string transition;  // free-form, e.g. "classical->electronic"
    std::string choice;      // "steered" | "prompted"
};

// CSV with header: participant_id,group,transition,choice
std::vector<TwoAfcRecord> parse_2afc_csv(std::istream& in);

struct TwoAfcCell {
    std::string group;
    std::string transition;
    int n = 0;
    int steered_count = 0;
    double accuracy = 0.0;  // fraction preferring the steered sample
    double p_value = 0.0;   // binomial test against chance 0.5
};

// One cell per (group, transition); musicians first, transitions in
// first-appearance order.
std::vector<TwoAfcCell> analyze_2afc(std::span<const TwoAfcRecord> records,
                                     BinomTail tail = BinomTail::Greater);

std::string render_2afc_markdown(std::span<const TwoAfcCell> cells);
std::string render_2afc_csv(std::span<const TwoAfcCell> cells);

}  // namespace steerlab
