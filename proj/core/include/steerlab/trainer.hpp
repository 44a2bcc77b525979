#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "steerlab/model.hpp"

namespace steerlab {

struct TrainConfig {
    double learning_rate = 3e-3;
    double beta1 = 0.9;   // first-moment coefficient
    double beta2 = 0.99;  // second-moment coefficient
    double adam_eps = 1e-8;
    int batch_size = 32;
    int steps = 1000;
    std::optional<double> grad_clip;  // global L2 norm cap
    std::uint64_t seed = 0;
    int log_every = 25;

    void validate() const;
};

struct TrainReport {
    std::vector<std::pair<int, double>> loss_curve;  // (step, batch mean cross-entropy)
    double heldout_perplexity = 0.0;
};

// Mean negative log-probability per predicted token. Positions whose target
// token id is in `exclude_target_ids` (genre tags, BOS) are skipped as
// prediction targets but remain visible as context.
double nll_loss(const ModelParams& params, std::span<const TokenSequence> batch,
                const std::vector<int>& exclude_target_ids);

// Exact analytic gradient of nll_loss, congruent to the parameters.
// When loss_out is non-null, the batch loss from the same forward passes is
// stored there.
ModelParams grad(const ModelParams& params, std::span<const TokenSequence> batch,
                 const std::vector<int>& exclude_target_ids, double* loss_out = nullptr);

// Adam (bias-corrected) next-token training. Deterministic per config seed;
// batch gradients are accumulated in sequence-index order. Aborts with
// NumericError if the loss goes non-finite or stays above 10x the initial
// loss for 100 consecutive steps.
std::pair<ModelParams, TrainReport> train(const TrainConfig& config,
                                          const ModelConfig& model_config,
                                          std::span<const TokenSequence> train_set,
                                          std::span<const TokenSequence> heldout_set,
                                          const std::vector<int>& exclude_target_ids);

}  // namespace steerlab
