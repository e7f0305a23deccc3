#include "dansep/evalkit.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

std::vector<double> noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 0.3);
  std::vector<double> x(n);
  for (auto& v : x) v = d(rng);
  return x;
}

void BM_BssDecompose(benchmark::State& state) {
  const auto r0 = noise(16000, 1), r1 = noise(16000, 2), est = noise(16000, 3);
  dansep::eval::EvalConfig cfg;
  cfg.proj_len = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(dansep::eval::bss_decompose(est, {r0, r1}, 0, cfg));
}
BENCHMARK(BM_BssDecompose)->Arg(1)->Arg(32)->Arg(512)->Unit(benchmark::kMillisecond);

void BM_ResolvePermutation(benchmark::State& state) {
  const auto r0 = noise(16000, 1), r1 = noise(16000, 2);
  const auto e0 = noise(16000, 3), e1 = noise(16000, 4);
  for (auto _ : state) benchmark::DoNotOptimize(dansep::eval::resolve_permutation({e0, e1}, {r0, r1}));
}
BENCHMARK(BM_ResolvePermutation)->Unit(benchmark::kMillisecond);

}  // namespace
