#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "steerlab/common.hpp"

namespace steerlab {

// RMS-norm epsilon; fixed so trained weights and traces are reproducible.
inline constexpr double kRmsEps = 1e-6;

struct ModelConfig {
    int vocab_size = 0;
    int d_model = 0;
    int n_layers = 0;
    int n_heads = 0;
    int d_mlp = 0;
    int max_context = 0;
    std::uint64_t seed = 0;

    int head_dim() const { return d_model / n_heads; }
    void validate() const;  // throws ConfigError
};

struct LayerParams {
    Eigen::VectorXd attn_norm_gain;  // d
    Eigen::MatrixXd wq, wk, wv, wo;  // d x d
    Eigen::VectorXd mlp_norm_gain;   // d
    Eigen::MatrixXd mlp_w1;          // d x d_mlp
    Eigen::VectorXd mlp_b1;          // d_mlp
    Eigen::MatrixXd mlp_w2;          // d_mlp x d
    Eigen::VectorXd mlp_b2;          // d
};

// Pre-norm decoder weights. The residual stream itself stays an un-normalized
// sum; normalization is applied only to the inputs of the attention and MLP
// branches. The MLP nonlinearity is SiLU (x * sigmoid(x)); the trainer
// differentiates exactly this choice.
struct ModelParams {
    ModelConfig config;
    Eigen::MatrixXd token_embedding;  // vocab x d
    Eigen::MatrixXd pos_embedding;    // max_context x d
    std::vector<LayerParams> layers;
    Eigen::MatrixXd unembedding;      // d x vocab

    // Zero tensors with shapes from config. Also the gradient container:
    // gradients are congruent to the parameters.
    static ModelParams zeros(const ModelConfig& config);
    // Seeded Gaussian init (std 0.08), norm gains 1, biases 0.
    static ModelParams init(const ModelConfig& config);

    bool all_finite() const;
};

// A named view over one parameter tensor. Vectors appear as n x 1 blocks.
struct NamedTensor {
    std::string name;
    Eigen::Ref<Eigen::MatrixXd> value;
};

// All tensors of a parameter set, in the fixed order used for serialization,
// optimizer state, and gradient checks:
//   token_embedding, pos_embedding,
//   per layer: attn_norm_gain, wq, wk, wv, wo,
//              mlp_norm_gain, mlp_w1, mlp_b1, mlp_w2, mlp_b2,
//   unembedding.
std::vector<NamedTensor> named_tensors(ModelParams& params);

struct TokenSequence {
    std::vector<int> tokens;
    std::optional<int> genre_label;

    int length() const { return static_cast<int>(tokens.size()); }
};

// Deterministic shape-preserving rewrite of every residual vector entering
// layer `layer` (applied before that layer's attention).
struct InterventionHook {
    int layer = 0;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> transform;
};

struct ForwardTrace {
    // residual[l] is the residual stream at the input of layer l (after the
    // hook, when one is active); residual[n_layers] is the final output.
    // Each matrix is positions x d_model.
    std::vector<Eigen::MatrixXd> residual;
    // Per-layer attention and MLP additions to the stream, positions x d_model.
    std::vector<Eigen::MatrixXd> attn_contrib;
    std::vector<Eigen::MatrixXd> mlp_contrib;
    Eigen::MatrixXd logits;  // positions x vocab
};

struct SamplingConfig {
    double temperature = 1.0;  // 0 means greedy argmax
    int top_k = 0;             // 0 means no truncation
    std::uint64_t seed = 0;
};

// Full causal forward pass. Attention at position i covers positions 0..i
// only; logits row i therefore depends only on tokens 0..i.
ForwardTrace forward(const ModelParams& params, const TokenSequence& tokens,
                     const InterventionHook* hook = nullptr);

// Probabilities from one logits row: positive entries summing to 1.
Eigen::VectorXd softmax_probs(const Eigen::VectorXd& logits_row);

// Extends `prefix` by `length` sampled tokens. Deterministic per seed; the
// hook (if any) is active at every decoding step.
TokenSequence generate(const ModelParams& params, const TokenSequence& prefix, int length,
                       const SamplingConfig& sampling, const InterventionHook* hook = nullptr);

// Model persistence: a JSON document (config + tensor section table) and a
// flat float64 blob, row-major within each tensor, tensors in
// named_tensors() order.
void save_model(const ModelParams& params, const std::filesystem::path& json_path,
                const std::filesystem::path& weights_path);
ModelParams load_model(const std::filesystem::path& json_path,
                       const std::filesystem::path& weights_path);

namespace detail {

// Everything the backward pass needs from one forward evaluation.
struct LayerCache {
    Eigen::MatrixXd x;       // residual at layer input (post-hook), P x d
    Eigen::MatrixXd attn_in; // rms-normed + gained, P x d
    Eigen::MatrixXd q, k, v; // P x d
    std::vector<Eigen::MatrixXd> probs;  // per head, P x P, causal rows
    Eigen::MatrixXd heads;   // concatenated head outputs, P x d
    Eigen::MatrixXd attn_out;
    Eigen::MatrixXd mid;     // x + attn_out
    Eigen::MatrixXd mlp_in;  // rms-normed + gained mid
    Eigen::MatrixXd pre_act; // P x d_mlp
    Eigen::MatrixXd act;     // silu(pre_act)
    Eigen::MatrixXd mlp_out;
};

struct ForwardCache {
    std::vector<LayerCache> layers;
    Eigen::MatrixXd final_residual;  // P x d
    Eigen::MatrixXd logits;          // P x vocab
};

ForwardCache forward_cached(const ModelParams& params, const TokenSequence& tokens,
                            const InterventionHook* hook);

}  // namespace detail

}  // namespace steerlab
