#include <benchmark/benchmark.h>

#include "semiseg/label_propagation.hpp"
#include "semiseg/metrics.hpp"
#include "semiseg/network.hpp"
#include "semiseg/rng.hpp"
#include "semiseg/training.hpp"

using namespace semiseg;

namespace {

void BM_StudentForward(benchmark::State& state) {
  torch::set_num_threads(1);
  torch::NoGradGuard ng;
  torch::manual_seed(0);
  NetConfig cfg;
  ModelBundle bundle(cfg);
  bundle->eval();
  const auto edge = state.range(0);
  auto x = torch::rand({1, 1, edge, edge, edge});
  for (auto _ : state) {
    auto out = forward_plain(*bundle, x, DecoderChoice::Theta, false);
    benchmark::DoNotOptimize(out.logits.data_ptr());
  }
  state.SetItemsProcessed(state.iterations() * edge * edge * edge);
}
BENCHMARK(BM_StudentForward)->Arg(16)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_CorrelationPropagate(benchmark::State& state) {
  Rng rng(1);
  const auto P = state.range(0);
  CorrelationFeatures f{rng.normal_tensor({2, 16, P}), rng.normal_tensor({2, 16, P})};
  auto pred = rng.normal_tensor({2, 3, P});
  for (auto _ : state) {
    auto out = propagate(pred, correlation_map(f));
    benchmark::DoNotOptimize(out.data_ptr());
  }
}
BENCHMARK(BM_CorrelationPropagate)->Arg(64)->Arg(512)->Unit(benchmark::kMicrosecond);

void BM_SurfaceDistances(benchmark::State& state) {
  const auto edge = state.range(0);
  auto grid = torch::arange(edge, torch::kFloat64);
  auto zz = grid.view({edge, 1, 1}), yy = grid.view({1, edge, 1}), xx = grid.view({1, 1, edge});
  const double c = edge / 2.0, r = edge / 3.0;
  auto ball = [&](double shift) {
    return ((zz - c - shift).pow(2) + (yy - c).pow(2) + (xx - c).pow(2)) <= r * r;
  };
  auto a = ball(0.0), b = ball(1.5);
  for (auto _ : state) benchmark::DoNotOptimize(surface_distances(a, b).hd95);
}
BENCHMARK(BM_SurfaceDistances)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
