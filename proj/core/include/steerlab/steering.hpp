#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "steerlab/model.hpp"

namespace steerlab {

enum class RenormalizeMode {
    // h <- (h + alpha r) / (1 + alpha)
    Eq6Exact,
    // same, then rescaled back to the original ||h||
    NormPreserving,
};
std::string renormalize_mode_name(RenormalizeMode m);
RenormalizeMode renormalize_mode_from_name(const std::string& name);

struct SteeringSpec {
    Eigen::VectorXd direction;  // unit vector r
    int layer = 0;
    double alpha = 0.0;
    RenormalizeMode mode = RenormalizeMode::Eq6Exact;

    void validate() const;  // ||r|| == 1 within 1e-9, alpha >= 0
};

// Applies the intervention to one residual vector.
Eigen::VectorXd intervene(const Eigen::VectorXd& h, const SteeringSpec& spec);

// Hook applying intervene() at every position of the spec's layer.
InterventionHook make_hook(const SteeringSpec& spec);

// generate() with the steering hook active at every decoding step.
TokenSequence steered_generate(const ModelParams& params, const TokenSequence& prefix,
                               const SteeringSpec& spec, int length,
                               const SamplingConfig& sampling);

struct SweepConfig {
    double alpha_min = 0.3;
    double alpha_max = 1.0;
    double alpha_step = 0.1;
    int seeds_per_prefix = 1;
    int gen_length = 64;

    std::vector<double> grid() const;
    void validate() const;
};

struct SweepPoint {
    double alpha = 0.0;
    double mean_delta = 0.0;
    double std_delta = 0.0;  // sample std; 0 when n == 1
    int n = 0;
};

struct SweepResult {
    std::vector<SweepPoint> points;  // in grid order
    double best_alpha = 0.0;         // argmax mean delta, ties to the smaller alpha
};

// Scores one (original, steered) generation pair; higher means a stronger
// shift toward the target concept.
using PairEvaluator = std::function<double(const TokenSequence& original,
                                           const TokenSequence& steered)>;

// Evaluates the grid of steering strengths over the given prefixes. Originals
// are generated once per (prefix, seed) and shared across all alphas; the
// steered run for each pair reuses the same sampling seed.
SweepResult alpha_sweep(const ModelParams& params, std::span<const TokenSequence> prefixes,
                        const Eigen::VectorXd& direction, int layer, const SweepConfig& sweep,
                        const SamplingConfig& base_sampling, RenormalizeMode mode,
                        const PairEvaluator& evaluator);

}  // namespace steerlab
