#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "steerlab/model.hpp"
#include "steerlab/rng.hpp"
#include "test_support.hpp"

using namespace steerlab;
using namespace steerlab::testing;

namespace {

// 2-layer, d_model=2 model with hand-set weights; expected logits were
// computed independently from the same equations at 40-digit precision.
ModelParams hand_model() {
    ModelConfig config = tiny_config(3, 2, 2, 1, 2, 4, 0);
    ModelParams p = ModelParams::zeros(config);
    p.token_embedding << 0.5, -0.25, 0.0, 0.75, -0.5, 0.25;
    p.pos_embedding << 0.125, 0.25, -0.25, 0.5, 0, 0, 0, 0;

    LayerParams& l0 = p.layers[0];
    l0.attn_norm_gain << 1, 0.5;
    l0.wq << 0.5, 0, 0, 0.5;
    l0.wk << 0.25, 0, 0, -0.25;
    l0.wv << 0.75, 0.25, -0.25, 0.5;
    l0.wo << 0.5, 0.25, -0.25, 0.5;
    l0.mlp_norm_gain << 0.75, 1.25;
    l0.mlp_w1 << 1, -0.5, 0.5, 1;
    l0.mlp_b1 << 0.125, -0.125;
    l0.mlp_w2 << 0.5, 0.25, -0.5, 0.75;
    l0.mlp_b2 << 0.0625, -0.0625;

    LayerParams& l1 = p.layers[1];
    l1.attn_norm_gain << 0.8, 1.2;
    l1.wq << -0.5, 0.25, 0.5, 0.5;
    l1.wk << 0.5, 0.5, -0.25, 0.25;
    l1.wv << 0.25, -0.5, 0.5, 0.25;
    l1.wo << 1, -0.25, 0.25, 0.5;
    l1.mlp_norm_gain << 1.5, 0.5;
    l1.mlp_w1 << -0.25, 0.75, 1, 0.25;
    l1.mlp_b1 << -0.25, 0.25;
    l1.mlp_w2 << 0.75, -0.25, 0.25, 1;
    l1.mlp_b2 << -0.125, 0.125;

    p.unembedding << 1, -0.5, 0.25, 0.5, 1, -0.75;
    return p;
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig config = tiny_config();
    CHECK_NOTHROW(config.validate());
    config.n_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = tiny_config();
    config.vocab_size = 1;
    CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("logits shape follows sequence length and vocab") {
    ModelParams params = ModelParams::init(tiny_config());
    TokenSequence tokens = random_tokens(5, 12, 7);
    ForwardTrace trace = forward(params, tokens);
    CHECK(trace.logits.rows() == 5);
    CHECK(trace.logits.cols() == 12);
    CHECK(trace.residual.size() == 3);  // layer inputs + final output
    for (const auto& layer : trace.residual) {
        CHECK(layer.rows() == 5);
        CHECK(layer.cols() == 8);
    }
}

TEST_CASE("zero blocks leave the residual stream untouched") {
    ModelConfig config = tiny_config();
    ModelParams params = ModelParams::zeros(config);
    params.token_embedding.setRandom();
    params.pos_embedding.setRandom();
    // norm gains stay zero: attention and MLP paths contribute nothing
    TokenSequence tokens = random_tokens(6, config.vocab_size, 3);
    ForwardTrace trace = forward(params, tokens);
    CHECK((trace.residual.back() - trace.residual.front()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("hand-set two-layer model matches independently computed logits") {
    ModelParams params = hand_model();
    TokenSequence tokens{{0, 2}, std::nullopt};
    ForwardTrace trace = forward(params, tokens);

    const double expected[2][3] = {
        {3.3689350535752769, 0.99767460478159815, -1.0352657287046464},
        {0.046266640524936457, 1.7426526745653692, -1.2244835362482521},
    };
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(trace.logits(i, j) == doctest::Approx(expected[i][j]).epsilon(1e-12));

    // the scalar-loop reference must agree on the same model
    auto reference = scalar_forward_logits(params, tokens.tokens);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j)
            CHECK(trace.logits(i, j) ==
                  doctest::Approx(reference[static_cast<size_t>(i)][static_cast<size_t>(j)])
                      .epsilon(1e-12));
}

TEST_CASE("forward agrees with the scalar reference on random models") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        ModelParams params = ModelParams::init(tiny_config(12, 8, 2, 2, 16, 8, seed));
        TokenSequence tokens = random_tokens(7, 12, seed + 100);
        ForwardTrace trace = forward(params, tokens);
        auto reference = scalar_forward_logits(params, tokens.tokens);
        for (long i = 0; i < trace.logits.rows(); ++i)
            for (long j = 0; j < trace.logits.cols(); ++j)
                CHECK(trace.logits(i, j) ==
                      doctest::Approx(reference[static_cast<size_t>(i)][static_cast<size_t>(j)])
                          .epsilon(1e-11));
    }
}

TEST_CASE("residual additivity: stream deltas equal recorded contributions") {
    ModelParams params = ModelParams::init(tiny_config());
    TokenSequence tokens = random_tokens(8, 12, 17);
    ForwardTrace trace = forward(params, tokens);
    for (size_t l = 0; l < trace.attn_contrib.size(); ++l) {
        Eigen::MatrixXd delta = trace.residual[l + 1] - trace.residual[l];
        Eigen::MatrixXd contributions = trace.attn_contrib[l] + trace.mlp_contrib[l];
        double rel = (delta - contributions).cwiseAbs().maxCoeff() /
                     std::max(1.0, contributions.cwiseAbs().maxCoeff());
        CHECK(rel < 1e-9);
    }
}

TEST_CASE("causality: perturbing token j leaves earlier logits bit-identical") {
    ModelParams params = ModelParams::init(tiny_config());
    TokenSequence tokens = random_tokens(8, 12, 23);
    ForwardTrace base = forward(params, tokens);
    for (int j = 2; j < 8; j += 2) {
        TokenSequence perturbed = tokens;
        perturbed.tokens[static_cast<size_t>(j)] =
            (perturbed.tokens[static_cast<size_t>(j)] + 1) % 12;
        ForwardTrace other = forward(params, perturbed);
        for (int i = 0; i < j; ++i)
            CHECK((base.logits.row(i) - other.logits.row(i)).cwiseAbs().maxCoeff() == 0.0);
        CHECK((base.logits.row(j) - other.logits.row(j)).cwiseAbs().maxCoeff() > 0.0);
    }
}

TEST_CASE("forward input validation") {
    ModelParams params = ModelParams::init(tiny_config());
    CHECK_THROWS_AS(forward(params, TokenSequence{}), ConfigError);
    CHECK_THROWS_AS(forward(params, TokenSequence{{0, 99}, std::nullopt}), ConfigError);
    CHECK_THROWS_AS(forward(params, random_tokens(9, 12, 1)), ConfigError);  // max_context 8
}

TEST_CASE("softmax_probs basics") {
    Eigen::VectorXd equal = Eigen::VectorXd::Constant(5, 3.25);
    Eigen::VectorXd probs = softmax_probs(equal);
    for (long i = 0; i < 5; ++i) CHECK(probs[i] == doctest::Approx(0.2).epsilon(1e-12));

    Eigen::VectorXd two(2);
    two << 0.0, std::log(3.0);
    Eigen::VectorXd p2 = softmax_probs(two);
    CHECK(p2[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(p2[1] == doctest::Approx(0.75).epsilon(1e-12));

    Eigen::VectorXd shifted = two.array() + 123.5;
    Eigen::VectorXd p3 = softmax_probs(shifted);
    CHECK((p2 - p3).cwiseAbs().maxCoeff() < 1e-12);

    CHECK(std::abs(p2.sum() - 1.0) < 1e-9);
    Eigen::VectorXd bad(2);
    bad << 1.0, std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(softmax_probs(bad), NumericError);
}

TEST_CASE("softmax rows of forward logits are probability vectors") {
    ModelParams params = ModelParams::init(tiny_config());
    TokenSequence tokens = random_tokens(6, 12, 29);
    ForwardTrace trace = forward(params, tokens);
    for (long i = 0; i < trace.logits.rows(); ++i) {
        Eigen::VectorXd p = softmax_probs(trace.logits.row(i).transpose());
        CHECK(p.minCoeff() > 0.0);
        CHECK(std::abs(p.sum() - 1.0) < 1e-9);
    }
}

TEST_CASE("generation: determinism, greedy limit, context overflow") {
    ModelParams params = ModelParams::init(tiny_config());
    TokenSequence prefix{{1, 4}, std::nullopt};

    SamplingConfig sampling;
    sampling.temperature = 1.0;
    sampling.seed = 77;
    TokenSequence a = generate(params, prefix, 5, sampling);
    TokenSequence b = generate(params, prefix, 5, sampling);
    CHECK(a.tokens == b.tokens);
    CHECK(a.length() == 7);

    sampling.seed = 78;
    TokenSequence c = generate(params, prefix, 5, sampling);
    CHECK(c.tokens != a.tokens);  // holds for this seed pair

    // temperature -> 0 is greedy argmax
    SamplingConfig greedy;
    greedy.temperature = 0.0;
    greedy.seed = 5;
    TokenSequence g = generate(params, prefix, 4, greedy);
    TokenSequence cur = prefix;
    for (int step = 0; step < 4; ++step) {
        ForwardTrace trace = forward(params, cur);
        long argmax = 0;
        trace.logits.row(trace.logits.rows() - 1).maxCoeff(&argmax);
        cur.tokens.push_back(static_cast<int>(argmax));
    }
    CHECK(g.tokens == cur.tokens);

    CHECK_THROWS_AS(generate(params, prefix, 7, sampling), ConfigError);
}

TEST_CASE("top-k sampling stays inside the k most likely tokens") {
    ModelParams params = ModelParams::init(tiny_config());
    TokenSequence prefix{{2}, std::nullopt};
    SamplingConfig sampling;
    sampling.top_k = 1;  // equivalent to greedy regardless of temperature
    sampling.temperature = 2.5;
    sampling.seed = 11;
    SamplingConfig greedy;
    greedy.temperature = 0.0;
    CHECK(generate(params, prefix, 5, sampling).tokens ==
          generate(params, prefix, 5, greedy).tokens);
}

TEST_CASE("identity hook reproduces baseline generation bitwise") {
    ModelParams params = ModelParams::init(tiny_config());
    TokenSequence prefix{{3}, std::nullopt};
    SamplingConfig sampling;
    sampling.seed = 91;

    InterventionHook identity;
    identity.layer = 1;
    identity.transform = [](const Eigen::VectorXd& h) { return h; };

    TokenSequence base = generate(params, prefix, 5, sampling);
    TokenSequence hooked = generate(params, prefix, 5, sampling, &identity);
    CHECK(base.tokens == hooked.tokens);
}

TEST_CASE("hook replaces the residual before the layer's attention") {
    ModelParams params = ModelParams::init(tiny_config());
    TokenSequence tokens = random_tokens(4, 12, 37);

    InterventionHook zero;
    zero.layer = 1;
    zero.transform = [](const Eigen::VectorXd& h) { return Eigen::VectorXd::Zero(h.size()); };

    ForwardTrace base = forward(params, tokens);
    ForwardTrace hooked = forward(params, tokens, &zero);
    // trace stores the post-hook layer input
    CHECK(hooked.residual[1].cwiseAbs().maxCoeff() == 0.0);
    // layer 0 is untouched
    CHECK((hooked.residual[0] - base.residual[0]).cwiseAbs().maxCoeff() == 0.0);
    // downstream differs
    CHECK((hooked.logits - base.logits).cwiseAbs().maxCoeff() > 0.0);

    InterventionHook bad;
    bad.layer = 5;
    bad.transform = zero.transform;
    CHECK_THROWS_AS(forward(params, tokens, &bad), ConfigError);
}

TEST_CASE("model round-trips through json + weight blob") {
    ModelParams params = ModelParams::init(tiny_config(12, 8, 2, 2, 16, 8, 5));
    auto dir = std::filesystem::temp_directory_path() / "steerlab_model_io_test";
    std::filesystem::create_directories(dir);
    save_model(params, dir / "model.json", dir / "weights.bin");
    ModelParams loaded = load_model(dir / "model.json", dir / "weights.bin");

    TokenSequence tokens = random_tokens(6, 12, 41);
    ForwardTrace a = forward(params, tokens);
    ForwardTrace b = forward(loaded, tokens);
    CHECK((a.logits - b.logits).cwiseAbs().maxCoeff() == 0.0);
    std::filesystem::remove_all(dir);
}
