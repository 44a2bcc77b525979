#include "steerlab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "steerlab/rng.hpp"

namespace steerlab {

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("train: learning_rate must be > 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("train: moment coefficients must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (grad_clip && *grad_clip <= 0.0) throw ConfigError("train: grad_clip must be > 0");
    if (log_every < 1) throw ConfigError("train: log_every must be >= 1");
}

namespace {

bool is_excluded(int token, const std::vector<int>& exclude) {
    return std::find(exclude.begin(), exclude.end(), token) != exclude.end();
}

// Sum of -log p(target) over kept targets of one sequence, plus the count.
std::pair<double, long> sequence_nll(const Eigen::MatrixXd& logits, const TokenSequence& seq,
                                     const std::vector<int>& exclude) {
    double total = 0.0;
    long count = 0;
    for (int t = 1; t < seq.length(); ++t) {
        int target = seq.tokens[static_cast<size_t>(t)];
        if (is_excluded(target, exclude)) continue;
        Eigen::VectorXd row = logits.row(t - 1).transpose();
        double mx = row.maxCoeff();
        double lse = mx + std::log((row.array() - mx).exp().sum());
        total += lse - row[target];
        ++count;
    }
    return {total, count};
}

// dL/dx for y = rms_norm(x) .* gain, given dL/dy. Accumulates the gain grad.
Eigen::MatrixXd rms_norm_backward(const Eigen::MatrixXd& x, const Eigen::VectorXd& gain,
                                  const Eigen::MatrixXd& dy, Eigen::Ref<Eigen::MatrixXd> dgain) {
    const double d = static_cast<double>(x.cols());
    Eigen::MatrixXd dx(x.rows(), x.cols());
    for (long i = 0; i < x.rows(); ++i) {
        double r = std::sqrt(x.row(i).squaredNorm() / d + kRmsEps);
        dgain.col(0) += (dy.row(i).cwiseProduct(x.row(i)) / r).transpose();
        Eigen::RowVectorXd w = dy.row(i).cwiseProduct(gain.transpose());
        double proj = w.dot(x.row(i)) / (d * r * r * r);
        dx.row(i) = w / r - x.row(i) * proj;
    }
    return dx;
}

// Accumulates the (unscaled) gradient of the summed NLL of one sequence.
void backward_sequence(const ModelParams& params, const detail::ForwardCache& cache,
                       const TokenSequence& seq, const std::vector<int>& exclude,
                       ModelParams& g) {
    const ModelConfig& cfg = params.config;
    const int n = seq.length();
    const int nh = cfg.n_heads;
    const int dh = cfg.head_dim();
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(n, cfg.vocab_size);
    bool any = false;
    for (int t = 1; t < n; ++t) {
        int target = seq.tokens[static_cast<size_t>(t)];
        if (is_excluded(target, exclude)) continue;
        Eigen::VectorXd probs = softmax_probs(cache.logits.row(t - 1).transpose());
        dlogits.row(t - 1) = probs.transpose();
        dlogits(t - 1, target) -= 1.0;
        any = true;
    }
    if (!any) return;

    g.unembedding += cache.final_residual.transpose() * dlogits;
    Eigen::MatrixXd dh_stream = dlogits * params.unembedding.transpose();

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const detail::LayerCache& lc = cache.layers[static_cast<size_t>(l)];
        const LayerParams& lp = params.layers[static_cast<size_t>(l)];
        LayerParams& lg = g.layers[static_cast<size_t>(l)];

        // h_out = mid + mlp_out
        Eigen::MatrixXd dmid = dh_stream;
        lg.mlp_w2 += lc.act.transpose() * dh_stream;
        lg.mlp_b2 += dh_stream.colwise().sum().transpose();
        Eigen::MatrixXd dact = dh_stream * lp.mlp_w2.transpose();

        Eigen::ArrayXXd sig = 1.0 / (1.0 + (-lc.pre_act.array()).exp());
        Eigen::MatrixXd dpre =
            (dact.array() * sig * (1.0 + lc.pre_act.array() * (1.0 - sig))).matrix();

        lg.mlp_w1 += lc.mlp_in.transpose() * dpre;
        lg.mlp_b1 += dpre.colwise().sum().transpose();
        Eigen::MatrixXd dmlp_in = dpre * lp.mlp_w1.transpose();
        dmid += rms_norm_backward(lc.mid, lp.mlp_norm_gain, dmlp_in, lg.mlp_norm_gain);

        // mid = x + attn_out
        lg.wo += lc.heads.transpose() * dmid;
        Eigen::MatrixXd dheads = dmid * lp.wo.transpose();

        Eigen::MatrixXd dq = Eigen::MatrixXd::Zero(n, cfg.d_model);
        Eigen::MatrixXd dk = Eigen::MatrixXd::Zero(n, cfg.d_model);
        Eigen::MatrixXd dv = Eigen::MatrixXd::Zero(n, cfg.d_model);
        for (int head = 0; head < nh; ++head) {
            const Eigen::MatrixXd& p = lc.probs[static_cast<size_t>(head)];
            auto qh = lc.q.middleCols(head * dh, dh);
            auto kh = lc.k.middleCols(head * dh, dh);
            auto vh = lc.v.middleCols(head * dh, dh);
            auto dout = dheads.middleCols(head * dh, dh);

            Eigen::MatrixXd dp = dout * vh.transpose();
            dv.middleCols(head * dh, dh) = p.transpose() * dout;

            // softmax rows; masked columns have p == 0 and drop out
            Eigen::VectorXd rowdot = (dp.array() * p.array()).rowwise().sum().matrix();
            Eigen::MatrixXd ds =
                (p.array() * (dp.array().colwise() - rowdot.array())).matrix();

            dq.middleCols(head * dh, dh) = ds * kh * scale;
            dk.middleCols(head * dh, dh) = ds.transpose() * qh * scale;
        }

        lg.wq += lc.attn_in.transpose() * dq;
        lg.wk += lc.attn_in.transpose() * dk;
        lg.wv += lc.attn_in.transpose() * dv;
        Eigen::MatrixXd dattn_in =
            dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
        dmid += rms_norm_backward(lc.x, lp.attn_norm_gain, dattn_in, lg.attn_norm_gain);

        dh_stream = dmid;
    }

    for (int i = 0; i < n; ++i) {
        g.token_embedding.row(seq.tokens[static_cast<size_t>(i)]) += dh_stream.row(i);
        g.pos_embedding.row(i) += dh_stream.row(i);
    }
}

}  // namespace

double nll_loss(const ModelParams& params, std::span<const TokenSequence> batch,
                const std::vector<int>& exclude_target_ids) {
    if (batch.empty()) throw ConfigError("nll_loss: empty batch");
    double total = 0.0;
    long count = 0;
    for (const TokenSequence& seq : batch) {
        ForwardTrace trace = forward(params, seq);
        auto [t, c] = sequence_nll(trace.logits, seq, exclude_target_ids);
        total += t;
        count += c;
    }
    if (count == 0) throw ConfigError("nll_loss: batch contains no prediction targets");
    return total / static_cast<double>(count);
}

ModelParams grad(const ModelParams& params, std::span<const TokenSequence> batch,
                 const std::vector<int>& exclude_target_ids, double* loss_out) {
    if (batch.empty()) throw ConfigError("grad: empty batch");
    ModelParams g = ModelParams::zeros(params.config);
    double total = 0.0;
    long count = 0;
    for (const TokenSequence& seq : batch) {
        detail::ForwardCache cache = detail::forward_cached(params, seq, nullptr);
        auto [t, c] = sequence_nll(cache.logits, seq, exclude_target_ids);
        total += t;
        count += c;
        backward_sequence(params, cache, seq, exclude_target_ids, g);
    }
    if (count == 0) throw ConfigError("grad: batch contains no prediction targets");
    double inv = 1.0 / static_cast<double>(count);
    for (auto& t : named_tensors(g)) t.value *= inv;
    if (loss_out) *loss_out = total * inv;
    return g;
}

std::pair<ModelParams, TrainReport> train(const TrainConfig& config,
                                          const ModelConfig& model_config,
                                          std::span<const TokenSequence> train_set,
                                          std::span<const TokenSequence> heldout_set,
                                          const std::vector<int>& exclude_target_ids) {
    config.validate();
    if (train_set.empty()) throw ConfigError("train: empty training set");
    if (heldout_set.empty()) throw ConfigError("train: empty held-out set");

    ModelParams params = ModelParams::init(model_config);
    ModelParams m = ModelParams::zeros(model_config);
    ModelParams v = ModelParams::zeros(model_config);

    TrainReport report;
    const size_t n = train_set.size();
    const size_t batch_size = std::min(static_cast<size_t>(config.batch_size), n);

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = n;  // forces a shuffle on the first step
    std::uint64_t epoch = 0;

    double initial_loss = 0.0;
    int high_loss_streak = 0;

    std::vector<TokenSequence> batch(batch_size);
    for (int step = 1; step <= config.steps; ++step) {
        for (size_t i = 0; i < batch_size; ++i) {
            if (cursor == n) {
                Rng shuffle_rng(derive_seed(config.seed, "shuffle", epoch++));
                shuffle_rng.shuffle(order);
                cursor = 0;
            }
            batch[i] = train_set[order[cursor++]];
        }

        double loss = 0.0;
        ModelParams g = grad(params, batch, exclude_target_ids, &loss);

        if (!std::isfinite(loss))
            throw NumericError("train: non-finite loss at step " + std::to_string(step));
        if (step == 1) initial_loss = loss;
        high_loss_streak = (loss > 10.0 * initial_loss) ? high_loss_streak + 1 : 0;
        if (high_loss_streak >= 100)
            throw NumericError("train: loss above 10x initial for 100 consecutive steps (step " +
                               std::to_string(step) + ")");

        if (config.grad_clip) {
            double sq = 0.0;
            for (auto& t : named_tensors(g)) sq += t.value.squaredNorm();
            double norm = std::sqrt(sq);
            if (norm > *config.grad_clip) {
                double s = *config.grad_clip / norm;
                for (auto& t : named_tensors(g)) t.value *= s;
            }
        }

        auto pt = named_tensors(params);
        auto gt = named_tensors(g);
        auto mt = named_tensors(m);
        auto vt = named_tensors(v);
        double bc1 = 1.0 - std::pow(config.beta1, step);
        double bc2 = 1.0 - std::pow(config.beta2, step);
        for (size_t i = 0; i < pt.size(); ++i) {
            mt[i].value = config.beta1 * mt[i].value + (1.0 - config.beta1) * gt[i].value;
            vt[i].value = (config.beta2 * vt[i].value.array() +
                           (1.0 - config.beta2) * gt[i].value.array().square())
                              .matrix();
            pt[i].value.array() -= config.learning_rate * (mt[i].value.array() / bc1) /
                                   ((vt[i].value.array() / bc2).sqrt() + config.adam_eps);
        }

        if (step == 1 || step % config.log_every == 0 || step == config.steps)
            report.loss_curve.emplace_back(step, loss);
    }

    report.heldout_perplexity = std::exp(nll_loss(params, heldout_set, exclude_target_ids));
    return {std::move(params), std::move(report)};
}

}  // namespace steerlab
