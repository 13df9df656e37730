// Serial reference kernels against their OpenMP counterparts.

#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "endovid/kernels.hpp"

namespace kn = endovid::kernels;

namespace {

std::vector<float> random_values(std::size_t n, unsigned seed) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    std::vector<float> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

template <bool Parallel>
void BM_matmul_nn(benchmark::State& state) {
    const auto n = std::size_t(state.range(0));
    const auto a = random_values(n * n, 1), b = random_values(n * n, 2);
    std::vector<float> c(n * n);
    for (auto _ : state) {
        if constexpr (Parallel) kn::parallel::matmul_nn<float>(a, b, c, n, n, n, false);
        else kn::serial::matmul_nn<float>(a, b, c, n, n, n, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(std::int64_t(state.iterations()) * std::int64_t(2 * n * n * n));
}

template <bool Parallel>
void BM_matmul_tn(benchmark::State& state) {
    const auto n = std::size_t(state.range(0));
    const auto a = random_values(n * n, 3), b = random_values(n * n, 4);
    std::vector<float> c(n * n);
    for (auto _ : state) {
        if constexpr (Parallel) kn::parallel::matmul_tn<float>(a, b, c, n, n, n, false);
        else kn::serial::matmul_tn<float>(a, b, c, n, n, n, false);
        benchmark::DoNotOptimize(c.data());
    }
    state.SetItemsProcessed(std::int64_t(state.iterations()) * std::int64_t(2 * n * n * n));
}

template <bool Parallel>
void BM_softmax(benchmark::State& state) {
    const auto rows = std::size_t(state.range(0)), cols = std::size_t(256);
    const auto x = random_values(rows * cols, 5);
    std::vector<float> y(x.size());
    for (auto _ : state) {
        if constexpr (Parallel) kn::parallel::softmax_rows<float>(x, y, rows, cols, 1.0f / 0.07f);
        else kn::serial::softmax_rows<float>(x, y, rows, cols, 1.0f / 0.07f);
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Parallel>
void BM_layer_norm(benchmark::State& state) {
    const auto rows = std::size_t(state.range(0)), cols = std::size_t(64);
    const auto x = random_values(rows * cols, 6);
    const std::vector<float> g(cols, 1.0f), b(cols, 0.0f);
    std::vector<float> y(x.size()), mean(rows), rstd(rows);
    for (auto _ : state) {
        if constexpr (Parallel) kn::parallel::layer_norm_rows<float>(x, g, b, y, mean, rstd, rows, cols, 1e-6f);
        else kn::serial::layer_norm_rows<float>(x, g, b, y, mean, rstd, rows, cols, 1e-6f);
        benchmark::DoNotOptimize(y.data());
    }
}

template <bool Parallel>
void BM_gelu(benchmark::State& state) {
    const auto x = random_values(std::size_t(state.range(0)), 7);
    std::vector<float> y(x.size());
    for (auto _ : state) {
        if constexpr (Parallel) kn::parallel::gelu<float>(x, y);
        else kn::serial::gelu<float>(x, y);
        benchmark::DoNotOptimize(y.data());
    }
}

}  // namespace

BENCHMARK(BM_matmul_nn<false>)->Name("matmul_nn/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul_nn<true>)->Name("matmul_nn/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul_tn<false>)->Name("matmul_tn/serial")->Arg(64)->Arg(256);
BENCHMARK(BM_matmul_tn<true>)->Name("matmul_tn/parallel")->Arg(64)->Arg(256);
BENCHMARK(BM_softmax<false>)->Name("softmax/serial")->Arg(1024);
BENCHMARK(BM_softmax<true>)->Name("softmax/parallel")->Arg(1024);
BENCHMARK(BM_layer_norm<false>)->Name("layer_norm/serial")->Arg(4096);
BENCHMARK(BM_layer_norm<true>)->Name("layer_norm/parallel")->Arg(4096);
BENCHMARK(BM_gelu<false>)->Name("gelu/serial")->Arg(1 << 18);
BENCHMARK(BM_gelu<true>)->Name("gelu/parallel")->Arg(1 << 18);

BENCHMARK_MAIN();
