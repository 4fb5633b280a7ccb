#include <benchmark/benchmark.h>

#include "seufi/seufi.hpp"

using namespace seufi;

namespace {

void BM_Conv2dF32(benchmark::State& state) {
  const auto c = static_cast<std::size_t>(state.range(0));
  const auto hw = static_cast<std::size_t>(state.range(1));
  auto input = synthetic_input(static_cast<std::uint32_t>(c), hw, hw, 1);
  Tensor w = Tensor::f32({c, c, 3, 3}, std::vector<float>(c * c * 9, 0.01f));
  Tensor b = Tensor::f32({c}, std::vector<float>(c, 0.0f));
  for (auto _ : state) benchmark::DoNotOptimize(conv2d(input, w, b, 1, 1));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c * c * 9 * hw * hw));
}
BENCHMARK(BM_Conv2dF32)->Args({4, 32})->Args({16, 32})->Args({16, 64});

void BM_UnetForward(benchmark::State& state) {
  auto m = build_unet(2, 4, 3, 4, ActivationKind::ReLU, 0);
  auto in = synthetic_input(3, 32, 32, 1);
  for (auto _ : state) benchmark::DoNotOptimize(golden_run(m, in));
}
BENCHMARK(BM_UnetForward);

void BM_ApplyRevert(benchmark::State& state) {
  FaultableModel fm(build_unet(2, 4, 3, 4, ActivationKind::ReLU, 0));
  const FaultLocation loc{prunable_layers(fm.model()).front(), ParamKind::ConvWeight, 5, 30};
  for (auto _ : state) {
    auto h = fm.apply(loc);
    fm.revert(h);
  }
}
BENCHMARK(BM_ApplyRevert);

void BM_Campaign(benchmark::State& state) {
  auto m = build_unet(1, 4, 3, 4, ActivationKind::Sigmoid, 0);
  CampaignConfig c;
  c.cap = static_cast<std::uint64_t>(state.range(0));
  c.inputs = {synthetic_input(3, 32, 32, 1)};
  for (auto _ : state) benchmark::DoNotOptimize(run_campaign(m, c, 1));
}
BENCHMARK(BM_Campaign)->Arg(10)->Arg(50)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
