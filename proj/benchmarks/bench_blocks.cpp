#include <benchmark/benchmark.h>

#include <random>

#include "ninformer/blocks.hpp"

using namespace ninformer;

namespace {

constexpr std::size_t kDim = 256;
constexpr std::size_t kHidden = 512;

Variable<float> tokens(std::size_t n) {
  std::mt19937_64 rng(n);
  std::normal_distribution<float> dist;
  Tensor<float> t({1, n, kDim});
  for (auto& x : t.data()) x = dist(rng);
  return Variable<float>(std::move(t));
}

}  // namespace

// Single blocks at d = 256 over a range of token counts; range(0) is n.

static void BM_VitBlock(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  ParamStore<float> store;
  ParamBuilder<float> pb(store, 1);
  const auto p = make_vit_block(pb, "b", kDim, 4, kHidden);
  const auto x = tokens(n);
  for (auto _ : state) benchmark::DoNotOptimize(vit_block(x, p).value().raw());
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_VitBlock)->RangeMultiplier(2)->Range(16, 512)->Unit(benchmark::kMicrosecond)->Complexity();

static void BM_MixerBlock(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  ParamStore<float> store;
  ParamBuilder<float> pb(store, 1);
  const auto p = make_mixer(pb, "b", n, kDim, kHidden, kHidden);
  const auto x = tokens(n);
  for (auto _ : state) benchmark::DoNotOptimize(mixer_block(x, p).value().raw());
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_MixerBlock)->RangeMultiplier(2)->Range(16, 512)->Unit(benchmark::kMicrosecond)->Complexity();

static void BM_NinBlock(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  ParamStore<float> store;
  ParamBuilder<float> pb(store, 1);
  const auto p = make_nin_block(pb, "b", n, kDim, kHidden, kHidden, kHidden);
  const auto x = tokens(n);
  for (auto _ : state) benchmark::DoNotOptimize(nin_block(x, p).value().raw());
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_NinBlock)->RangeMultiplier(2)->Range(16, 512)->Unit(benchmark::kMicrosecond)->Complexity();

static void BM_LocalVitBlock(benchmark::State& state) {
  const auto side = static_cast<std::size_t>(state.range(0));
  ParamStore<float> store;
  ParamBuilder<float> pb(store, 1);
  const auto p = make_localvit_block(pb, "b", kDim, 4, kHidden);
  const auto x = tokens(side * side);
  for (auto _ : state) benchmark::DoNotOptimize(localvit_block(x, Grid{side, side}, p).value().raw());
  state.SetComplexityN(static_cast<std::int64_t>(side * side));
}
BENCHMARK(BM_LocalVitBlock)->DenseRange(4, 16, 4)->Unit(benchmark::kMicrosecond)->Complexity();
