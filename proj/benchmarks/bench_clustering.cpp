#include "dansep/clustering.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

using dansep::Matrix;
namespace cl = dansep::cluster;

// Two blobs in K dimensions, M points: roughly the embedding cloud of one utterance.
Matrix blobs(Eigen::Index k, Eigen::Index m) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix x(k, m);
  for (Eigen::Index j = 0; j < m; ++j)
    for (Eigen::Index i = 0; i < k; ++i) x(i, j) = d(rng) + (j % 2 ? 3.0 : -3.0) * (i == 0);
  return x;
}

void BM_KMeans(benchmark::State& state) {
  const Matrix x = blobs(10, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(cl::kmeans(x, 2));
}
BENCHMARK(BM_KMeans)->Arg(8000)->Arg(32000)->Unit(benchmark::kMillisecond);

void BM_GmmFull(benchmark::State& state) {
  const Matrix x = blobs(10, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(cl::gmm_fit(x, 2));
}
BENCHMARK(BM_GmmFull)->Arg(8000)->Arg(32000)->Unit(benchmark::kMillisecond);

}  // namespace
