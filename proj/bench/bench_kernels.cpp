// Serial reference vs OpenMP kernels on shapes the stereo model actually runs.
// Set OMP_NUM_THREADS to compare thread counts.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "wxstereo/kernels/kernels.hpp"

namespace k = wxs::kernels;

namespace {

std::vector<double> random_values(size_t n, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

// Stride-4 refinement conv of the toy model at 96x192: 32 -> 32 channels, 24x48.
template <auto Conv>
void BM_Conv(benchmark::State& state) {
  const k::ConvGeometry g{32, 24 * state.range(0), 48 * state.range(0), 32, 3, 1, 1};
  const auto x = random_values(static_cast<size_t>(g.in_channels * g.in_h * g.in_w), 1);
  const auto w = random_values(static_cast<size_t>(g.out_channels * g.in_channels * 9), 2);
  const auto b = random_values(static_cast<size_t>(g.out_channels), 3);
  std::vector<double> y(static_cast<size_t>(g.out_channels * g.out_h() * g.out_w()));
  for (auto _ : state) {
    Conv(g, x, w, b, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(state.iterations() * g.out_channels * g.out_h() * g.out_w() * g.in_channels * 9);
}

// Quarter-resolution cost volume: 32 channels, 48 candidates.
template <auto Corr>
void BM_Correlation(benchmark::State& state) {
  const int64_t c = 32, h = 24 * state.range(0), w = 48 * state.range(0), d = 48;
  const auto a = random_values(static_cast<size_t>(c * h * w), 4);
  const auto bb = random_values(static_cast<size_t>(c * h * w), 5);
  std::vector<double> out(static_cast<size_t>(d * h * w));
  for (auto _ : state) {
    Corr(c, h, w, d, a, bb, -1.0, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * d * h * w * c);
}

template <auto Matmul>
void BM_Matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  const auto a = random_values(static_cast<size_t>(n * n), 6);
  const auto b = random_values(static_cast<size_t>(n * n), 7);
  std::vector<double> out(static_cast<size_t>(n * n));
  for (auto _ : state) {
    Matmul(n, n, n, a, b, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * n);
}

// Cross-view matcher: N tokens per view at width 64.
template <auto Sim>
void BM_Similarity(benchmark::State& state) {
  const int64_t n = state.range(0), width = 64;
  const auto fs = random_values(static_cast<size_t>(n * width), 8);
  const auto fd = random_values(static_cast<size_t>(n * width), 9);
  const auto ds = random_values(static_cast<size_t>(n), 10);
  const auto dd = random_values(static_cast<size_t>(n), 11);
  std::vector<double> out(static_cast<size_t>(n * n));
  const k::SimilarityInputs in{fs, ds, fd, dd, n, n, width, 0.5, 2.0};
  for (auto _ : state) {
    Sim(in, out);
    benchmark::DoNotOptimize(out.data());
  }
  state.SetItemsProcessed(state.iterations() * n * n * width);
}

}  // namespace

BENCHMARK(BM_Conv<k::serial::conv2d_forward>)->Name("conv2d/serial")->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Conv<k::omp::conv2d_forward>)->Name("conv2d/omp")->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Correlation<k::serial::correlation_forward>)
    ->Name("correlation/serial")->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Correlation<k::omp::correlation_forward>)
    ->Name("correlation/omp")->Arg(1)->Arg(2)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Matmul<k::serial::matmul>)->Name("matmul/serial")->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Matmul<k::omp::matmul>)->Name("matmul/omp")->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Similarity<k::serial::similarity_matrix>)
    ->Name("similarity/serial")->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Similarity<k::omp::similarity_matrix>)
    ->Name("similarity/omp")->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::AddCustomContext("omp_threads", std::to_string(k::max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
