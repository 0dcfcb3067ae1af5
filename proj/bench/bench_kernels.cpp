// Serial reference vs. parallel kernels on the policy network's layer shapes.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "gearlab/nn/kernels.hpp"

using gearlab::nn::ConvGeom;
namespace ref = gearlab::nn::reference;
namespace par = gearlab::nn::parallel;

namespace {

const ConvGeom kLayers[] = {
    {3, 64, 64, 8, 5, 2},
    {8, 30, 30, 16, 3, 2},
    {16, 14, 14, 32, 3, 2},
};

std::vector<float> random_vec(std::size_t n, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> d(-1.f, 1.f);
    std::vector<float> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

template <bool Parallel>
void BM_ConvForward(benchmark::State& state) {
    const ConvGeom& g = kLayers[state.range(0)];
    const int batch = static_cast<int>(state.range(1));
    auto in = random_vec(static_cast<std::size_t>(batch) * g.in_size(), 1);
    auto w = random_vec(g.weight_size(), 2);
    auto b = random_vec(g.out_c, 3);
    std::vector<float> out(static_cast<std::size_t>(batch) * g.out_size());
    for (auto _ : state) {
        if constexpr (Parallel)
            par::conv2d_forward(g, batch, in.data(), w.data(), b.data(), out.data());
        else
            ref::conv2d_forward(g, batch, in.data(), w.data(), b.data(), out.data());
        benchmark::DoNotOptimize(out.data());
    }
    state.counters["GFLOPS"] = benchmark::Counter(
        2.0 * batch * g.out_size() * g.col_rows() * state.iterations(), benchmark::Counter::kIsRate,
        benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_ConvBackwardWeight(benchmark::State& state) {
    const ConvGeom& g = kLayers[state.range(0)];
    const int batch = static_cast<int>(state.range(1));
    auto in = random_vec(static_cast<std::size_t>(batch) * g.in_size(), 1);
    auto dout = random_vec(static_cast<std::size_t>(batch) * g.out_size(), 2);
    std::vector<float> dw(g.weight_size()), db(g.out_c);
    for (auto _ : state) {
        if constexpr (Parallel)
            par::conv2d_backward_weight(g, batch, in.data(), dout.data(), dw.data(), db.data());
        else
            ref::conv2d_backward_weight(g, batch, in.data(), dout.data(), dw.data(), db.data());
        benchmark::DoNotOptimize(dw.data());
    }
    state.counters["GFLOPS"] = benchmark::Counter(
        2.0 * batch * g.out_size() * g.col_rows() * state.iterations(), benchmark::Counter::kIsRate,
        benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_ConvBackwardInput(benchmark::State& state) {
    const ConvGeom& g = kLayers[state.range(0)];
    const int batch = static_cast<int>(state.range(1));
    auto dout = random_vec(static_cast<std::size_t>(batch) * g.out_size(), 1);
    auto w = random_vec(g.weight_size(), 2);
    std::vector<float> din(static_cast<std::size_t>(batch) * g.in_size());
    for (auto _ : state) {
        if constexpr (Parallel)
            par::conv2d_backward_input(g, batch, dout.data(), w.data(), din.data());
        else
            ref::conv2d_backward_input(g, batch, dout.data(), w.data(), din.data());
        benchmark::DoNotOptimize(din.data());
    }
    state.counters["GFLOPS"] = benchmark::Counter(
        2.0 * batch * g.out_size() * g.col_rows() * state.iterations(), benchmark::Counter::kIsRate,
        benchmark::Counter::kIs1000);
}

template <bool Parallel>
void BM_DenseForward(benchmark::State& state) {
    const int batch = static_cast<int>(state.range(0));
    const int n_in = 1152, n_out = 128;
    auto x = random_vec(static_cast<std::size_t>(batch) * n_in, 1);
    auto w = random_vec(static_cast<std::size_t>(n_in) * n_out, 2);
    auto b = random_vec(n_out, 3);
    std::vector<float> y(static_cast<std::size_t>(batch) * n_out);
    for (auto _ : state) {
        if constexpr (Parallel)
            par::dense_forward(batch, n_in, n_out, x.data(), w.data(), b.data(), y.data());
        else
            ref::dense_forward(batch, n_in, n_out, x.data(), w.data(), b.data(), y.data());
        benchmark::DoNotOptimize(y.data());
    }
    state.counters["GFLOPS"] = benchmark::Counter(2.0 * batch * n_in * n_out * state.iterations(),
                                                  benchmark::Counter::kIsRate, benchmark::Counter::kIs1000);
}

void ConvArgs(benchmark::internal::Benchmark* b) {
    for (int layer = 0; layer < 3; ++layer) b->Args({layer, 64});
}

}  // namespace

BENCHMARK(BM_ConvForward<false>)->Apply(ConvArgs);
BENCHMARK(BM_ConvForward<true>)->Apply(ConvArgs);
BENCHMARK(BM_ConvBackwardWeight<false>)->Apply(ConvArgs);
BENCHMARK(BM_ConvBackwardWeight<true>)->Apply(ConvArgs);
BENCHMARK(BM_ConvBackwardInput<false>)->Apply(ConvArgs);
BENCHMARK(BM_ConvBackwardInput<true>)->Apply(ConvArgs);
BENCHMARK(BM_DenseForward<false>)->Arg(64);
BENCHMARK(BM_DenseForward<true>)->Arg(64);

BENCHMARK_MAIN();
