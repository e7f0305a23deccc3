#include "dansep/masking.hpp"
#include "dansep/network.hpp"

#include <benchmark/benchmark.h>

namespace {

using dansep::Matrix;
namespace net = dansep::net;

// Two-speaker ideal masks for random F x T spectra.
dansep::mask::MaskSet random_masks(Eigen::Index f, Eigen::Index t) {
  const Matrix a = Matrix::Random(f, t).cwiseAbs();
  const Matrix b = Matrix::Random(f, t).cwiseAbs();
  return dansep::mask::binarize(dansep::mask::wiener_like_masks({a, b}), dansep::mask::MaskThreshold(0.5));
}

net::ArchSpec desk_arch() {
  net::ArchSpec a;
  a.num_layers = 2;
  a.hidden = 64;
  a.embed_dim = 10;
  return a;
}

void BM_ForwardDesk(benchmark::State& state) {
  const auto params = net::ModelParams::random(desk_arch(), 1);
  const Matrix x = Matrix::Random(129, state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(net::forward_embed(x, params));
}
BENCHMARK(BM_ForwardDesk)->Arg(100)->Arg(250)->Unit(benchmark::kMillisecond);

void BM_BackwardDesk(benchmark::State& state) {
  const auto params = net::ModelParams::random(desk_arch(), 1);
  const Eigen::Index t = state.range(0);
  const Matrix x = Matrix::Random(129, t);
  const Matrix mag = Matrix::Random(129, t).cwiseAbs();
  const auto ideal = random_masks(129, t);
  for (auto _ : state) benchmark::DoNotOptimize(net::backward(x, mag, ideal, params));
}
BENCHMARK(BM_BackwardDesk)->Arg(100)->Arg(250)->Unit(benchmark::kMillisecond);

void BM_ForwardFullSize(benchmark::State& state) {
  const auto params = net::ModelParams::random(net::ArchSpec{}, 1);
  const Matrix x = Matrix::Random(129, 100);
  for (auto _ : state) benchmark::DoNotOptimize(net::forward_embed(x, params));
}
BENCHMARK(BM_ForwardFullSize)->Unit(benchmark::kMillisecond);

}  // namespace
