// Parallel kernels against the serial reference on decoder-sized shapes.
// Run with OMP_NUM_THREADS set to compare thread counts.

#include <vector>

#include <benchmark/benchmark.h>

#include "geia/kernels.hpp"
#include "geia/rng.hpp"

namespace k = geia::kernels;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  geia::Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

// rows x hidden times hidden x out, e.g. a batch of tokens through a projection
template <auto Fn>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto kk = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  const auto a = filled(m * kk, 1), b = filled(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    Fn(a, b, c, m, kk, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * kk * n));
}

template <auto Fn>
void BM_LogSoftmax(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto x = filled(m * n, 3);
  std::vector<double> out(m * n);
  for (auto _ : state) {
    Fn(x, out, m, n);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * n));
}

void shapes(benchmark::internal::Benchmark* b) {
  b->Args({64, 64, 64})->Args({512, 64, 256})->Args({1024, 64, 2000})->Unit(benchmark::kMicrosecond);
}

void softmax_shapes(benchmark::internal::Benchmark* b) {
  b->Args({512, 256})->Args({1024, 2000})->Unit(benchmark::kMicrosecond);
}

}  // namespace

BENCHMARK(BM_Gemm<k::gemm>)->Name("gemm/parallel")->Apply(shapes);
BENCHMARK(BM_Gemm<k::reference::gemm>)->Name("gemm/reference")->Apply(shapes);
BENCHMARK(BM_Gemm<k::gemm_bt>)->Name("gemm_bt/parallel")->Apply(shapes);
BENCHMARK(BM_Gemm<k::reference::gemm_bt>)->Name("gemm_bt/reference")->Apply(shapes);
BENCHMARK(BM_Gemm<k::gemm_at>)->Name("gemm_at/parallel")->Apply(shapes);
BENCHMARK(BM_Gemm<k::reference::gemm_at>)->Name("gemm_at/reference")->Apply(shapes);
BENCHMARK(BM_LogSoftmax<k::log_softmax_rows>)->Name("log_softmax/parallel")->Apply(softmax_shapes);
BENCHMARK(BM_LogSoftmax<k::reference::log_softmax_rows>)->Name("log_softmax/reference")->Apply(softmax_shapes);

BENCHMARK_MAIN();
