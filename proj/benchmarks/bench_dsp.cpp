#include "dansep/dsp.hpp"

#include <benchmark/benchmark.h>

#include <random>

namespace {

dansep::Waveform noise(std::size_t n) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d(0.0, 0.3);
  dansep::Waveform w;
  w.samples.resize(n);
  for (auto& v : w.samples) v = d(rng);
  return w;
}

void BM_Stft(benchmark::State& state) {
  const auto w = noise(static_cast<std::size_t>(state.range(0)));
  const dansep::dsp::StftConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(dansep::dsp::stft(w, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Stft)->Arg(16000)->Arg(64000);

void BM_StftRoundTrip(benchmark::State& state) {
  const auto w = noise(static_cast<std::size_t>(state.range(0)));
  const dansep::dsp::StftConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(dansep::dsp::istft(dansep::dsp::stft(w, cfg), cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_StftRoundTrip)->Arg(16000);

void BM_Decimate(benchmark::State& state) {
  auto w = noise(32000);
  w.sample_rate = 16000;
  for (auto _ : state) benchmark::DoNotOptimize(dansep::dsp::decimate2(w));
}
BENCHMARK(BM_Decimate);

}  // namespace
