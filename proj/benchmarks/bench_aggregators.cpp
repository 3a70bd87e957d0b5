#include <benchmark/benchmark.h>

#include "fedbench/aggregators.hpp"

namespace {

using namespace fedbench;

std::vector<Vec> make_updates(int n, int dim) {
  Rng rng(42);
  std::vector<Vec> u(n, Vec(dim));
  for (Vec& v : u) {
    for (double& x : v) x = rng.gaussian();
  }
  return u;
}

void BM_WeightedMean(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto updates = make_updates(n, 4096);
  const Vec alpha(n, 1.0 / n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(agg_weighted_mean(updates, alpha).delta);
  }
}
BENCHMARK(BM_WeightedMean)->Arg(10)->Arg(50);

void BM_CoordinateMedian(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto updates = make_updates(n, 4096);
  for (auto _ : state) {
    benchmark::DoNotOptimize(agg_median(updates).delta);
  }
}
BENCHMARK(BM_CoordinateMedian)->Arg(10)->Arg(50);

void BM_MultiKrum(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto updates = make_updates(n, 4096);
  for (auto _ : state) {
    benchmark::DoNotOptimize(agg_multi_krum(updates, n / 4, 5).delta);
  }
}
BENCHMARK(BM_MultiKrum)->Arg(10)->Arg(50);

void BM_Bulyan(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto updates = make_updates(n, 4096);
  for (auto _ : state) {
    benchmark::DoNotOptimize(agg_bulyan(updates, (n - 3) / 4).delta);
  }
}
BENCHMARK(BM_Bulyan)->Arg(11)->Arg(23);

void BM_GeometricMedian(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto updates = make_updates(n, 4096);
  const Vec alpha(n, 1.0 / n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(agg_rfa(updates, alpha, 3, 1e-6).delta);
  }
}
BENCHMARK(BM_GeometricMedian)->Arg(10)->Arg(50);

void BM_DncSpectralFilter(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const auto updates = make_updates(n, 4096);
  for (auto _ : state) {
    Rng rng(7);
    benchmark::DoNotOptimize(agg_dnc(updates, 1000, 1.0, 1, n / 4, rng).delta);
  }
}
BENCHMARK(BM_DncSpectralFilter)->Arg(10)->Arg(50);

}  // namespace
