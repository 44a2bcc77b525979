#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "steerlab/model.hpp"

namespace steerlab {

enum class Pooling { MeanContent, PerPosition };
std::string pooling_name(Pooling p);
Pooling pooling_from_name(const std::string& name);

// Residual-stream activations per (row, layer). With mean pooling a row is one
// input sample, averaged over content positions; in per-position mode every
// content position contributes a row. layers[l] is rows x d_model for the
// input of layer l, layers[n_layers] for the final output.
struct ActivationDataset {
    std::vector<Eigen::MatrixXd> layers;
    std::vector<int> labels;        // genre per row
    std::vector<int> sample_index;  // originating sample per row
    Pooling pooling = Pooling::MeanContent;

    long rows() const { return layers.empty() ? 0 : layers.front().rows(); }
    int layer_count() const { return static_cast<int>(layers.size()); }
};

// Runs every sequence through the model and extracts residual vectors at all
// layer inputs plus the final output. Positions whose token id is in
// exclude_token_ids (genre tag, markers, BOS) are left out of both pooling
// and per-position rows.
ActivationDataset capture(const ModelParams& params, std::span<const TokenSequence> sequences,
                          Pooling pooling, const std::vector<int>& exclude_token_ids);

void save_activations(const ActivationDataset& data, const std::filesystem::path& bin_path,
                      const std::filesystem::path& sidecar_path);
ActivationDataset load_activations(const std::filesystem::path& bin_path,
                                   const std::filesystem::path& sidecar_path);

struct KmeansResult {
    Eigen::VectorXi assignments;
    Eigen::MatrixXd centroids;          // k x d
    std::vector<double> objective;      // within-cluster sum of squares per iteration
};

// Lloyd iterations from k-means++ seeding. Deterministic per seed; an empty
// cluster is re-seeded at the point farthest from its current centroid.
KmeansResult kmeans(const Eigen::MatrixXd& points, int k, std::uint64_t seed,
                    int max_iters = 100, double tol = 1e-9);
// Same, from explicit initial centroids.
KmeansResult kmeans_lloyd(const Eigen::MatrixXd& points, Eigen::MatrixXd centroids,
                          int max_iters = 100, double tol = 1e-9);

// Adjusted Rand index. Degenerate pairs (both partitions trivial) score 1.0
// when the partitions are identical and 0.0 otherwise.
double ari(const std::vector<int>& labels, const std::vector<int>& assignments);

// Mutual information normalized by the arithmetic mean of the entropies.
double nmi(const std::vector<int>& labels, const std::vector<int>& assignments);

// Entry (g, c) = |S_g intersect C_c| / |S_g union C_c|.
Eigen::MatrixXd jaccard_matrix(const std::vector<int>& labels,
                               const std::vector<int>& assignments);

struct ClusterReport {
    std::vector<double> ari_per_layer;
    std::vector<double> nmi_per_layer;
    int best_layer = 0;         // argmax ARI, ties to the lowest layer
    Eigen::MatrixXd jaccard;    // at best_layer
    int k = 0;
};

ClusterReport analyze_clusters(const ActivationDataset& data, int k, std::uint64_t seed,
                               int max_iters = 100, double tol = 1e-9);

struct ProbeModel {
    Eigen::MatrixXd weights;  // d_model x n_outputs (1 for binary, G for one-hot)
    Eigen::VectorXd bias;
    int layer = 0;
    double train_accuracy = 0.0;
    double heldout_accuracy = 0.0;
    double lambda = 0.0;
    // binary probes remember their class pair; +direction points toward label1
    int label0 = -1;
    int label1 = -1;
};

struct ProbeOptions {
    std::optional<double> lambda;   // default: 1e-3 * trace(cov) / d
    double holdout_fraction = 0.2;  // 0 scores held-out accuracy on the train set
    std::uint64_t seed = 0;
};

// Closed-form ridge least squares with centered features; the bias is not
// penalized. Returns (weights, bias) minimizing sum ||W'x + b - y||^2 +
// lambda ||W||_F^2.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> ridge_fit(const Eigen::MatrixXd& X,
                                                      const Eigen::MatrixXd& Y, double lambda);

ProbeModel train_binary_probe(const Eigen::MatrixXd& X, const std::vector<int>& targets01,
                              const ProbeOptions& options);
ProbeModel train_multi_probe(const Eigen::MatrixXd& X, const std::vector<int>& labels,
                             int n_classes, const ProbeOptions& options);

// Dataset-level wrappers selecting one layer (and one class pair).
ProbeModel train_pair_probe(const ActivationDataset& data, int layer, int genre0, int genre1,
                            const ProbeOptions& options);
ProbeModel train_layer_multi_probe(const ActivationDataset& data, int layer, int n_classes,
                                   const ProbeOptions& options);

// argmax of held-out accuracy; ties break to the lowest layer index.
int best_layer(const std::vector<ProbeModel>& probes);

// Unit direction of a binary probe; moving along +r raises the probe output
// toward label1.
Eigen::VectorXd steering_vector(const ProbeModel& probe);

}  // namespace steerlab
