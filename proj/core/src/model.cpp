#include "steerlab/model.hpp"

#include <algorithm>
#include <cmath>

#include "steerlab/rng.hpp"

namespace steerlab {

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
    if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_mlp <= 0)
        throw ConfigError("model: all dimensions must be positive");
    if (max_context < 2) throw ConfigError("model: max_context must be >= 2");
    if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    p.token_embedding = Eigen::MatrixXd::Zero(config.vocab_size, config.d_model);
    p.pos_embedding = Eigen::MatrixXd::Zero(config.max_context, config.d_model);
    p.layers.resize(static_cast<size_t>(config.n_layers));
    for (auto& layer : p.layers) {
        layer.attn_norm_gain = Eigen::VectorXd::Zero(config.d_model);
        layer.wq = Eigen::MatrixXd::Zero(config.d_model, config.d_model);
        layer.wk = Eigen::MatrixXd::Zero(config.d_model, config.d_model);
        layer.wv = Eigen::MatrixXd::Zero(config.d_model, config.d_model);
        layer.wo = Eigen::MatrixXd::Zero(config.d_model, config.d_model);
        layer.mlp_norm_gain = Eigen::VectorXd::Zero(config.d_model);
        layer.mlp_w1 = Eigen::MatrixXd::Zero(config.d_model, config.d_mlp);
        layer.mlp_b1 = Eigen::VectorXd::Zero(config.d_mlp);
        layer.mlp_w2 = Eigen::MatrixXd::Zero(config.d_mlp, config.d_model);
        layer.mlp_b2 = Eigen::VectorXd::Zero(config.d_model);
    }
    p.unembedding = Eigen::MatrixXd::Zero(config.d_model, config.vocab_size);
    return p;
}

ModelParams ModelParams::init(const ModelConfig& config) {
    constexpr double kInitStd = 0.08;
    ModelParams p = zeros(config);
    Rng rng(config.seed);
    for (auto& t : named_tensors(p)) {
        bool is_gain = t.name.find("norm_gain") != std::string::npos;
        bool is_bias = t.name.find("mlp_b") != std::string::npos;
        for (long c = 0; c < t.value.cols(); ++c)
            for (long r = 0; r < t.value.rows(); ++r)
                t.value(r, c) = is_gain ? 1.0 : is_bias ? 0.0 : rng.normal(0.0, kInitStd);
    }
    return p;
}

bool ModelParams::all_finite() const {
    auto& self = const_cast<ModelParams&>(*this);
    for (auto& t : named_tensors(self))
        if (!t.value.allFinite()) return false;
    return true;
}

std::vector<NamedTensor> named_tensors(ModelParams& params) {
    std::vector<NamedTensor> out;
    out.push_back({"token_embedding", params.token_embedding});
    out.push_back({"pos_embedding", params.pos_embedding});
    for (size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        std::string prefix = "layers." + std::to_string(l) + ".";
        out.push_back({prefix + "attn_norm_gain", layer.attn_norm_gain});
        out.push_back({prefix + "wq", layer.wq});
        out.push_back({prefix + "wk", layer.wk});
        out.push_back({prefix + "wv", layer.wv});
        out.push_back({prefix + "wo", layer.wo});
        out.push_back({prefix + "mlp_norm_gain", layer.mlp_norm_gain});
        out.push_back({prefix + "mlp_w1", layer.mlp_w1});
        out.push_back({prefix + "mlp_b1", layer.mlp_b1});
        out.push_back({prefix + "mlp_w2", layer.mlp_w2});
        out.push_back({prefix + "mlp_b2", layer.mlp_b2});
    }
    out.push_back({"unembedding", params.unembedding});
    return out;
}

namespace {

// y_row = x_row * gain / rms(x_row)
Eigen::MatrixXd rms_norm(const Eigen::MatrixXd& x, const Eigen::VectorXd& gain) {
    Eigen::MatrixXd y(x.rows(), x.cols());
    const double d = static_cast<double>(x.cols());
    for (long i = 0; i < x.rows(); ++i) {
        double rms = std::sqrt(x.row(i).squaredNorm() / d + kRmsEps);
        y.row(i) = x.row(i).cwiseProduct(gain.transpose()) / rms;
    }
    return y;
}

void check_tokens(const ModelConfig& config, const TokenSequence& tokens) {
    if (tokens.tokens.empty()) throw ConfigError("forward: empty token sequence");
    if (tokens.length() > config.max_context)
        throw ConfigError("forward: sequence length " + std::to_string(tokens.length()) +
                          " exceeds max_context " + std::to_string(config.max_context));
    for (int id : tokens.tokens)
        if (id < 0 || id >= config.vocab_size)
            throw ConfigError("forward: token id " + std::to_string(id) + " out of range");
}

}  // namespace

namespace detail {

ForwardCache forward_cached(const ModelParams& params, const TokenSequence& tokens,
                            const InterventionHook* hook) {
    const ModelConfig& cfg = params.config;
    check_tokens(cfg, tokens);
    if (hook) {
        if (hook->layer < 0 || hook->layer >= cfg.n_layers)
            throw ConfigError("forward: hook layer out of range");
        if (!hook->transform) throw ConfigError("forward: hook has no transform");
    }

    const int n = tokens.length();
    const int nh = cfg.n_heads;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    ForwardCache cache;
    cache.layers.resize(static_cast<size_t>(cfg.n_layers));

    Eigen::MatrixXd h(n, cfg.d_model);
    for (int i = 0; i < n; ++i)
        h.row(i) = params.token_embedding.row(tokens.tokens[static_cast<size_t>(i)]) +
                   params.pos_embedding.row(i);

    for (int l = 0; l < cfg.n_layers; ++l) {
        LayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const LayerParams& lp = params.layers[static_cast<size_t>(l)];

        if (hook && hook->layer == l) {
            for (int i = 0; i < n; ++i) {
                Eigen::VectorXd replaced = hook->transform(h.row(i).transpose());
                if (replaced.size() != cfg.d_model)
                    throw ConfigError("forward: hook transform changed vector dimension");
                h.row(i) = replaced.transpose();
            }
        }
        lc.x = h;

        lc.attn_in = rms_norm(lc.x, lp.attn_norm_gain);
        lc.q = lc.attn_in * lp.wq;
        lc.k = lc.attn_in * lp.wk;
        lc.v = lc.attn_in * lp.wv;

        lc.probs.resize(static_cast<size_t>(nh));
        lc.heads.resize(n, cfg.d_model);
        for (int head = 0; head < nh; ++head) {
            auto qh = lc.q.middleCols(head * dh, dh);
            auto kh = lc.k.middleCols(head * dh, dh);
            auto vh = lc.v.middleCols(head * dh, dh);
            Eigen::MatrixXd& p = lc.probs[static_cast<size_t>(head)];
            p = Eigen::MatrixXd::Zero(n, n);
            for (int i = 0; i < n; ++i) {
                // causal: row i covers columns 0..i only
                Eigen::RowVectorXd scores = (qh.row(i) * kh.topRows(i + 1).transpose()) * scale;
                double mx = scores.maxCoeff();
                Eigen::RowVectorXd ex = (scores.array() - mx).exp();
                p.row(i).head(i + 1) = ex / ex.sum();
            }
            lc.heads.middleCols(head * dh, dh) = p * vh;
        }
        lc.attn_out = lc.heads * lp.wo;
        lc.mid = lc.x + lc.attn_out;

        lc.mlp_in = rms_norm(lc.mid, lp.mlp_norm_gain);
        lc.pre_act = (lc.mlp_in * lp.mlp_w1).rowwise() + lp.mlp_b1.transpose();
        lc.act = (lc.pre_act.array() / (1.0 + (-lc.pre_act.array()).exp())).matrix();  // silu
        lc.mlp_out = (lc.act * lp.mlp_w2).rowwise() + lp.mlp_b2.transpose();

        h = lc.mid + lc.mlp_out;
    }

    cache.final_residual = h;
    cache.logits = h * params.unembedding;
    return cache;
}

}  // namespace detail

ForwardTrace forward(const ModelParams& params, const TokenSequence& tokens,
                     const InterventionHook* hook) {
    detail::ForwardCache cache = detail::forward_cached(params, tokens, hook);
    ForwardTrace trace;
    trace.residual.reserve(cache.layers.size() + 1);
    for (auto& lc : cache.layers) {
        trace.residual.push_back(lc.x);
        trace.attn_contrib.push_back(lc.attn_out);
        trace.mlp_contrib.push_back(lc.mlp_out);
    }
    trace.residual.push_back(cache.final_residual);
    trace.logits = std::move(cache.logits);
    return trace;
}

Eigen::VectorXd softmax_probs(const Eigen::VectorXd& logits_row) {
    if (!logits_row.allFinite()) throw NumericError("softmax: non-finite logits");
    double mx = logits_row.maxCoeff();
    Eigen::VectorXd ex = (logits_row.array() - mx).exp();
    return ex / ex.sum();
}

namespace {

int sample_token(const Eigen::VectorXd& logits, const SamplingConfig& sampling, Rng& rng) {
    const int vocab = static_cast<int>(logits.size());
    if (sampling.temperature < 0.0) throw ConfigError("generate: negative temperature");

    std::vector<int> order(static_cast<size_t>(vocab));
    for (int i = 0; i < vocab; ++i) order[static_cast<size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (logits[a] != logits[b]) return logits[a] > logits[b];
        return a < b;
    });

    if (sampling.temperature < 1e-12) return order[0];  // greedy limit

    int keep = (sampling.top_k > 0 && sampling.top_k < vocab) ? sampling.top_k : vocab;
    Eigen::VectorXd scaled(keep);
    for (int i = 0; i < keep; ++i) scaled[i] = logits[order[static_cast<size_t>(i)]] / sampling.temperature;
    Eigen::VectorXd probs = softmax_probs(scaled);

    double u = rng.uniform01();
    double acc = 0.0;
    for (int i = 0; i < keep; ++i) {
        acc += probs[i];
        if (u < acc) return order[static_cast<size_t>(i)];
    }
    return order[static_cast<size_t>(keep - 1)];
}

}  // namespace

TokenSequence generate(const ModelParams& params, const TokenSequence& prefix, int length,
                       const SamplingConfig& sampling, const InterventionHook* hook) {
    if (length < 0) throw ConfigError("generate: negative length");
    if (prefix.length() + length > params.config.max_context)
        throw ConfigError("generate: context overflow (" +
                          std::to_string(prefix.length() + length) + " > " +
                          std::to_string(params.config.max_context) + ")");

    TokenSequence out = prefix;
    Rng rng(sampling.seed);
    for (int step = 0; step < length; ++step) {
        ForwardTrace trace = forward(params, out, hook);
        Eigen::VectorXd last = trace.logits.row(trace.logits.rows() - 1).transpose();
        out.tokens.push_back(sample_token(last, sampling, rng));
    }
    return out;
}

}  // namespace steerlab
