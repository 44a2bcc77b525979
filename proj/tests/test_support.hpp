#pragma once

// Shared helpers for the unit and acceptance suites.

#include <vector>

#include "steerlab/model.hpp"
#include "steerlab/rng.hpp"

namespace steerlab::testing {

inline ModelConfig tiny_config(int vocab = 12, int d_model = 8, int n_layers = 2, int n_heads = 2,
                               int d_mlp = 16, int max_context = 8, std::uint64_t seed = 123) {
    ModelConfig config;
    config.vocab_size = vocab;
    config.d_model = d_model;
    config.n_layers = n_layers;
    config.n_heads = n_heads;
    config.d_mlp = d_mlp;
    config.max_context = max_context;
    config.seed = seed;
    return config;
}

inline TokenSequence random_tokens(int length, int vocab, std::uint64_t seed) {
    Rng rng(seed);
    TokenSequence seq;
    for (int i = 0; i < length; ++i) seq.tokens.push_back(rng.index(vocab));
    return seq;
}

// Plain-loop reference forward pass, kept free of the Eigen implementation
// path on purpose: same equations, independent arithmetic route.
inline std::vector<std::vector<double>> scalar_forward_logits(const ModelParams& params,
                                                              const std::vector<int>& tokens) {
    const ModelConfig& c = params.config;
    const int n = static_cast<int>(tokens.size());
    const int d = c.d_model;
    const int dh = c.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    auto rms_row = [&](const std::vector<double>& x, const Eigen::VectorXd& gain) {
        double ms = 0.0;
        for (double v : x) ms += v * v;
        double r = std::sqrt(ms / static_cast<double>(x.size()) + kRmsEps);
        std::vector<double> y(x.size());
        for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] * gain[static_cast<long>(i)] / r;
        return y;
    };
    auto matmul_row = [&](const std::vector<double>& x, const Eigen::MatrixXd& w) {
        std::vector<double> y(static_cast<size_t>(w.cols()), 0.0);
        for (long j = 0; j < w.cols(); ++j)
            for (long i = 0; i < w.rows(); ++i) y[static_cast<size_t>(j)] += x[static_cast<size_t>(i)] * w(i, j);
        return y;
    };

    std::vector<std::vector<double>> h(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(d)));
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j)
            h[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                params.token_embedding(tokens[static_cast<size_t>(i)], j) + params.pos_embedding(i, j);

    for (const LayerParams& lp : params.layers) {
        std::vector<std::vector<double>> a_in, q, k, v;
        for (int i = 0; i < n; ++i) {
            a_in.push_back(rms_row(h[static_cast<size_t>(i)], lp.attn_norm_gain));
            q.push_back(matmul_row(a_in.back(), lp.wq));
            k.push_back(matmul_row(a_in.back(), lp.wk));
            v.push_back(matmul_row(a_in.back(), lp.wv));
        }
        std::vector<std::vector<double>> heads(static_cast<size_t>(n),
                                               std::vector<double>(static_cast<size_t>(d), 0.0));
        for (int head = 0; head < c.n_heads; ++head) {
            const int off = head * dh;
            for (int i = 0; i < n; ++i) {
                std::vector<double> scores(static_cast<size_t>(i + 1), 0.0);
                for (int j = 0; j <= i; ++j) {
                    double s = 0.0;
                    for (int a = 0; a < dh; ++a)
                        s += q[static_cast<size_t>(i)][static_cast<size_t>(off + a)] *
                             k[static_cast<size_t>(j)][static_cast<size_t>(off + a)];
                    scores[static_cast<size_t>(j)] = s * scale;
                }
                double mx = *std::max_element(scores.begin(), scores.end());
                double total = 0.0;
                for (double& s : scores) {
                    s = std::exp(s - mx);
                    total += s;
                }
                for (int j = 0; j <= i; ++j)
                    for (int a = 0; a < dh; ++a)
                        heads[static_cast<size_t>(i)][static_cast<size_t>(off + a)] +=
                            (scores[static_cast<size_t>(j)] / total) *
                            v[static_cast<size_t>(j)][static_cast<size_t>(off + a)];
            }
        }
        for (int i = 0; i < n; ++i) {
            std::vector<double> attn_out = matmul_row(heads[static_cast<size_t>(i)], lp.wo);
            std::vector<double> mid(static_cast<size_t>(d));
            for (int j = 0; j < d; ++j)
                mid[static_cast<size_t>(j)] =
                    h[static_cast<size_t>(i)][static_cast<size_t>(j)] + attn_out[static_cast<size_t>(j)];
            std::vector<double> m_in = rms_row(mid, lp.mlp_norm_gain);
            std::vector<double> pre = matmul_row(m_in, lp.mlp_w1);
            for (long j = 0; j < lp.mlp_b1.size(); ++j) pre[static_cast<size_t>(j)] += lp.mlp_b1[j];
            for (double& u : pre) u = u / (1.0 + std::exp(-u));
            std::vector<double> mlp_out = matmul_row(pre, lp.mlp_w2);
            for (long j = 0; j < lp.mlp_b2.size(); ++j) mlp_out[static_cast<size_t>(j)] += lp.mlp_b2[j];
            for (int j = 0; j < d; ++j)
                h[static_cast<size_t>(i)][static_cast<size_t>(j)] =
                    mid[static_cast<size_t>(j)] + mlp_out[static_cast<size_t>(j)];
        }
    }

    std::vector<std::vector<double>> logits(
        static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(c.vocab_size), 0.0));
    for (int i = 0; i < n; ++i)
        for (int t = 0; t < c.vocab_size; ++t)
            for (int a = 0; a < d; ++a)
                logits[static_cast<size_t>(i)][static_cast<size_t>(t)] +=
                    h[static_cast<size_t>(i)][static_cast<size_t>(a)] * params.unembedding(a, t);
    return logits;
}

}  // namespace steerlab::testing
