#include "steerlab/steering.hpp"

#include <cmath>

#include "steerlab/rng.hpp"

namespace steerlab {

std::string renormalize_mode_name(RenormalizeMode m) {
    return m == RenormalizeMode::Eq6Exact ? "eq6_exact" : "norm_preserving";
}

RenormalizeMode renormalize_mode_from_name(const std::string& name) {
    if (name == "eq6_exact") return RenormalizeMode::Eq6Exact;
    if (name == "norm_preserving") return RenormalizeMode::NormPreserving;
    throw ConfigError("unknown renormalize mode: " + name);
}

void SteeringSpec::validate() const {
    if (direction.size() == 0) throw ConfigError("steering: empty direction");
    if (std::abs(direction.norm() - 1.0) > 1e-9)
        throw ConfigError("steering: direction must be unit norm");
    if (alpha < 0.0) throw ConfigError("steering: alpha must be >= 0");
    if (layer < 0) throw ConfigError("steering: negative layer");
}

Eigen::VectorXd intervene(const Eigen::VectorXd& h, const SteeringSpec& spec) {
    spec.validate();
    if (h.size() != spec.direction.size())
        throw ConfigError("intervene: dimension mismatch");
    if (!h.allFinite()) throw NumericError("intervene: non-finite residual vector");

    Eigen::VectorXd out = (h + spec.alpha * spec.direction) / (1.0 + spec.alpha);
    if (spec.mode == RenormalizeMode::NormPreserving) {
        double out_norm = out.norm();
        if (out_norm > 0.0) out *= h.norm() / out_norm;
    }
    return out;
}

InterventionHook make_hook(const SteeringSpec& spec) {
    spec.validate();
    InterventionHook hook;
    hook.layer = spec.layer;
    hook.transform = [spec](const Eigen::VectorXd& h) { return intervene(h, spec); };
    return hook;
}

TokenSequence steered_generate(const ModelParams& params, const TokenSequence& prefix,
                               const SteeringSpec& spec, int length,
                               const SamplingConfig& sampling) {
    if (spec.layer >= params.config.n_layers)
        throw ConfigError("steered_generate: layer out of range");
    InterventionHook hook = make_hook(spec);
    return generate(params, prefix, length, sampling, &hook);
}

std::vector<double> SweepConfig::grid() const {
    std::vector<double> alphas;
    for (double a = alpha_min; a <= alpha_max + 1e-12; a += alpha_step)
        alphas.push_back(a);
    return alphas;
}

void SweepConfig::validate() const {
    if (alpha_min < 0.0 || alpha_min > alpha_max)
        throw ConfigError("sweep: need 0 <= alpha_min <= alpha_max");
    if (alpha_step <= 0.0) throw ConfigError("sweep: alpha_step must be > 0");
    if (seeds_per_prefix < 1) throw ConfigError("sweep: seeds_per_prefix must be >= 1");
    if (gen_length < 1) throw ConfigError("sweep: gen_length must be >= 1");
}

SweepResult alpha_sweep(const ModelParams& params, std::span<const TokenSequence> prefixes,
                        const Eigen::VectorXd& direction, int layer, const SweepConfig& sweep,
                        const SamplingConfig& base_sampling, RenormalizeMode mode,
                        const PairEvaluator& evaluator) {
    sweep.validate();
    if (prefixes.empty()) throw ConfigError("alpha_sweep: no prefixes");
    if (!evaluator) throw ConfigError("alpha_sweep: no evaluator");

    // one original per (prefix, seed); shared across the whole grid
    std::vector<TokenSequence> originals;
    std::vector<SamplingConfig> samplings;
    for (size_t i = 0; i < prefixes.size(); ++i) {
        for (int s = 0; s < sweep.seeds_per_prefix; ++s) {
            SamplingConfig cfg = base_sampling;
            cfg.seed = derive_seed(base_sampling.seed, "sweep",
                                   static_cast<std::uint64_t>(i) *
                                           static_cast<std::uint64_t>(sweep.seeds_per_prefix) +
                                       static_cast<std::uint64_t>(s));
            originals.push_back(generate(params, prefixes[i], sweep.gen_length, cfg));
            samplings.push_back(cfg);
        }
    }

    SweepResult result;
    for (double alpha : sweep.grid()) {
        SteeringSpec spec;
        spec.direction = direction;
        spec.layer = layer;
        spec.alpha = alpha;
        spec.mode = mode;

        double sum = 0.0, sumsq = 0.0;
        int n = 0;
        size_t pair_idx = 0;
        for (size_t i = 0; i < prefixes.size(); ++i) {
            for (int s = 0; s < sweep.seeds_per_prefix; ++s, ++pair_idx) {
                TokenSequence steered = steered_generate(params, prefixes[i], spec,
                                                         sweep.gen_length, samplings[pair_idx]);
                double delta = evaluator(originals[pair_idx], steered);
                sum += delta;
                sumsq += delta * delta;
                ++n;
            }
        }
        SweepPoint point;
        point.alpha = alpha;
        point.n = n;
        point.mean_delta = sum / n;
        point.std_delta =
            n > 1 ? std::sqrt(std::max(0.0, (sumsq - sum * sum / n) / (n - 1))) : 0.0;
        result.points.push_back(point);
    }

    result.best_alpha = result.points.front().alpha;
    double best = result.points.front().mean_delta;
    for (const SweepPoint& p : result.points) {
        if (p.mean_delta > best) {
            best = p.mean_delta;
            result.best_alpha = p.alpha;
        }
    }
    return result;
}

}  // namespace steerlab
