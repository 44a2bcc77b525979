#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "steerlab/model.hpp"

namespace steerlab {

// Token id layout: [0, n_content) content tokens, then one tag per genre,
// then a small shared marker sub-vocabulary, then BOS last.
struct VocabLayout {
    int n_content = 64;
    int n_genres = 4;
    int n_markers = 4;

    int vocab_size() const { return n_content + n_genres + n_markers + 1; }
    int genre_tag(int genre) const { return n_content + genre; }
    int marker(int i) const { return n_content + n_genres + i; }
    int bos() const { return n_content + n_genres + n_markers; }

    bool is_content(int id) const { return id >= 0 && id < n_content; }
    bool is_genre_tag(int id) const { return id >= n_content && id < n_content + n_genres; }
    bool is_marker(int id) const {
        return id >= n_content + n_genres && id < n_content + n_genres + n_markers;
    }

    // Tags + markers + BOS: stripped for scoring, excluded from pooling.
    std::vector<int> non_content_ids() const;
    // Tags + BOS: never prediction targets (markers are predictable and kept).
    std::vector<int> excluded_target_ids() const;

    void validate() const;
};

enum class Split { ModelTrain, ProbeTrain, Eval };
std::string split_name(Split s);
Split split_from_name(const std::string& name);

// Order-1 Markov source over content tokens with a genre-preferred subset and
// a periodic tempo marker.
struct GenreSpec {
    int genre_id = 0;
    std::string name;
    Eigen::MatrixXd transition;        // n_content x n_content, row-stochastic
    std::vector<int> preferred_tokens;
    int tempo_period = 8;

    void validate(int n_content) const;
};

struct CorpusConfig {
    int n_genres = 4;
    int samples_per_genre = 900;
    int seq_length = 128;
    int tempo_period = 8;
    std::uint64_t seed = 0;
    // model-train / probe-train / eval
    std::array<double, 3> split_fractions{0.8, 0.1, 0.1};
    std::vector<std::string> genre_names;  // empty: defaults

    std::vector<std::string> effective_genre_names() const;
    void validate() const;
};

struct LabeledCorpus {
    std::vector<TokenSequence> sequences;  // genre_label always set
    std::vector<Split> split;              // parallel to sequences

    std::vector<size_t> split_indices(Split s) const;
    std::vector<TokenSequence> split_sequences(Split s) const;
};

// Stationary unigram distribution of a row-stochastic matrix (power iteration).
Eigen::VectorXd stationary_distribution(const Eigen::MatrixXd& transition);

double tv_distance(const Eigen::VectorXd& p, const Eigen::VectorXd& q);
double tv_distance(const std::map<int, double>& p, const std::map<int, double>& q);

// Throws ConfigError unless every pair of genres is distinguishable:
// total-variation distance between stationary distributions >= 0.3.
void validate_genre_specs(const std::vector<GenreSpec>& specs, int n_content);

// Deterministic default sources: overlapping preferred windows plus a
// genre-specific circular drift, validated for pairwise distinguishability.
std::vector<GenreSpec> default_genre_specs(const CorpusConfig& config, const VocabLayout& layout);

// Balanced labeled corpus: per genre, samples_per_genre sequences of
// seq_length tokens, genre tag at position 0, marker every tempo_period
// positions, splits stratified per genre. Deterministic per seed.
LabeledCorpus gen_corpus(const CorpusConfig& config, const std::vector<GenreSpec>& specs,
                         const VocabLayout& layout);

// Normalized histogram of gaps between consecutive tempo markers. Sequences
// with fewer than two markers yield an empty histogram (undefined).
std::map<int, double> tempo_histogram(const TokenSequence& seq, const VocabLayout& layout);

double histogram_entropy(const std::map<int, double>& hist);

// JSON Lines, one {"tokens", "genre", "split"} object per sequence.
void save_corpus_jsonl(const LabeledCorpus& corpus, const std::filesystem::path& path);
LabeledCorpus load_corpus_jsonl(const std::filesystem::path& path);

void save_genre_specs(const std::vector<GenreSpec>& specs, const std::filesystem::path& path);
std::vector<GenreSpec> load_genre_specs(const std::filesystem::path& path);

}  // namespace steerlab
