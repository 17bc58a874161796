// Serial reference vs OpenMP kernels at the sizes the experiment driver uses
// (batch x 64 hidden units, d = 16 features, pseudo-sampling across classes).
//
//   ./bench_kernels --benchmark_filter=affine

#include <random>

#include <benchmark/benchmark.h>

#include "gvalign/kernels.hpp"

namespace {

using gvalign::Matrix;
namespace k = gvalign::kernels;

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (double& v : m.values()) v = n(rng);
    return m;
}

template <auto Fn>
void bm_affine(benchmark::State& state) {
    const auto b = static_cast<std::size_t>(state.range(0));
    const Matrix a = random_matrix(b, 64, 1), w = random_matrix(64, 64, 2);
    const std::vector<double> bias(64, 0.1);
    Matrix out;
    for (auto _ : state) {
        Fn(a, w, bias, out);
        benchmark::DoNotOptimize(out.values().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b * 64 * 64));
}

template <auto Fn>
void bm_matmul_tn(benchmark::State& state) {
    const auto b = static_cast<std::size_t>(state.range(0));
    const Matrix g = random_matrix(b, 64, 3), a = random_matrix(b, 64, 4);
    Matrix out;
    for (auto _ : state) {
        Fn(g, a, out);
        benchmark::DoNotOptimize(out.values().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b * 64 * 64));
}

template <auto Fn>
void bm_gaussian(benchmark::State& state) {
    const auto classes = static_cast<std::size_t>(state.range(0));
    const Matrix means = random_matrix(classes, 16, 5);
    Matrix chol(16, 16);
    for (std::size_t i = 0; i < 16; ++i) chol(i, i) = 1.0;
    std::vector<std::uint64_t> seeds(classes);
    for (std::size_t c = 0; c < classes; ++c) seeds[c] = c + 11;
    Matrix out;
    for (auto _ : state) {
        Fn(means, chol, 64, seeds, false, out);
        benchmark::DoNotOptimize(out.values().data());
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(classes * 64));
}

BENCHMARK(bm_affine<k::serial::affine_nt>)->Name("affine_nt/serial")->Arg(32)->Arg(256)->Arg(4096);
BENCHMARK(bm_affine<k::omp::affine_nt>)->Name("affine_nt/omp")->Arg(32)->Arg(256)->Arg(4096)->UseRealTime();
BENCHMARK(bm_matmul_tn<k::serial::matmul_tn>)->Name("matmul_tn/serial")->Arg(32)->Arg(256)->Arg(4096);
BENCHMARK(bm_matmul_tn<k::omp::matmul_tn>)->Name("matmul_tn/omp")->Arg(32)->Arg(256)->Arg(4096)->UseRealTime();
BENCHMARK(bm_gaussian<k::serial::gaussian_blocks>)->Name("gaussian_blocks/serial")->Arg(20)->Arg(100);
BENCHMARK(bm_gaussian<k::omp::gaussian_blocks>)->Name("gaussian_blocks/omp")->Arg(20)->Arg(100)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
