#include <benchmark/benchmark.h>

#include "steerlab/activation_lab.hpp"
#include "steerlab/model.hpp"
#include "steerlab/rng.hpp"
#include "steerlab/steering.hpp"
#include "steerlab/trainer.hpp"

namespace {

using namespace steerlab;

ModelConfig bench_model_config() {
    ModelConfig config;
    config.vocab_size = 73;
    config.d_model = 64;
    config.n_layers = 4;
    config.n_heads = 4;
    config.d_mlp = 256;
    config.max_context = 160;
    config.seed = 7;
    return config;
}

TokenSequence random_tokens(int length, int vocab, std::uint64_t seed) {
    Rng rng(seed);
    TokenSequence seq;
    for (int i = 0; i < length; ++i) seq.tokens.push_back(rng.index(vocab));
    return seq;
}

void BM_Forward(benchmark::State& state) {
    ModelParams params = ModelParams::init(bench_model_config());
    TokenSequence tokens = random_tokens(static_cast<int>(state.range(0)), 73, 1);
    for (auto _ : state) {
        ForwardTrace trace = forward(params, tokens);
        benchmark::DoNotOptimize(trace.logits);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Forward)->Arg(32)->Arg(64)->Arg(128);

void BM_Gradient(benchmark::State& state) {
    ModelParams params = ModelParams::init(bench_model_config());
    std::vector<TokenSequence> batch;
    for (int i = 0; i < 4; ++i)
        batch.push_back(random_tokens(static_cast<int>(state.range(0)), 73, 10 + i));
    for (auto _ : state) {
        ModelParams g = grad(params, batch, {});
        benchmark::DoNotOptimize(g.unembedding);
    }
}
BENCHMARK(BM_Gradient)->Arg(32)->Arg(64);

void BM_Generate(benchmark::State& state) {
    ModelParams params = ModelParams::init(bench_model_config());
    TokenSequence prefix{{64}, 0};
    SamplingConfig sampling;
    sampling.seed = 3;
    for (auto _ : state) {
        TokenSequence out = generate(params, prefix, static_cast<int>(state.range(0)), sampling);
        benchmark::DoNotOptimize(out.tokens);
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Generate)->Arg(32)->Arg(64);

void BM_SteeredGenerate(benchmark::State& state) {
    ModelConfig config = bench_model_config();
    ModelParams params = ModelParams::init(config);
    SteeringSpec spec;
    spec.direction = Eigen::VectorXd::Unit(config.d_model, 0);
    spec.layer = 2;
    spec.alpha = 0.5;
    TokenSequence prefix{{64}, 0};
    SamplingConfig sampling;
    sampling.seed = 3;
    for (auto _ : state) {
        TokenSequence out =
            steered_generate(params, prefix, spec, static_cast<int>(state.range(0)), sampling);
        benchmark::DoNotOptimize(out.tokens);
    }
}
BENCHMARK(BM_SteeredGenerate)->Arg(32)->Arg(64);

void BM_Kmeans(benchmark::State& state) {
    Rng rng(11);
    const long n = state.range(0);
    Eigen::MatrixXd points(n, 16);
    for (long i = 0; i < n; ++i)
        for (long j = 0; j < 16; ++j) points(i, j) = rng.normal() + (i % 4) * 3.0;
    for (auto _ : state) {
        KmeansResult result = kmeans(points, 4, 5);
        benchmark::DoNotOptimize(result.assignments);
    }
}
BENCHMARK(BM_Kmeans)->Arg(256)->Arg(1024);

void BM_RidgeProbe(benchmark::State& state) {
    Rng rng(13);
    const long n = state.range(0);
    Eigen::MatrixXd x(n, 64);
    std::vector<int> y(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
        int cls = static_cast<int>(i % 2);
        y[static_cast<size_t>(i)] = cls;
        for (long j = 0; j < 64; ++j) x(i, j) = rng.normal() + cls;
    }
    ProbeOptions options;
    for (auto _ : state) {
        ProbeModel probe = train_binary_probe(x, y, options);
        benchmark::DoNotOptimize(probe.weights);
    }
}
BENCHMARK(BM_RidgeProbe)->Arg(128)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
