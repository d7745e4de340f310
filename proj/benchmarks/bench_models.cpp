#include <benchmark/benchmark.h>

#include <random>

#include "ninformer/model.hpp"

using namespace ninformer;

namespace {

ModelConfig cifar10(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.image_height = c.image_width = 32;
  c.channels = 3;
  c.patch_size = 4;
  c.d_model = 256;
  c.n_blocks = 4;
  c.n_heads = 4;
  c.d_mlp = c.d_token_mix = c.d_channel_mix = 512;
  c.n_classes = 10;
  c.use_positional_embedding = default_positional_embedding(v);
  return c;
}

// Full classifier forward pass; range(0) is the batch size. Reports
// per-sample time (seconds) as an inverted rate counter.
void forward(benchmark::State& state, Variant v) {
  const auto cfg = cifar10(v);
  const Model<float> model(cfg, 0);
  const auto batch = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(0);
  std::normal_distribution<float> dist;
  Tensor<float> images({batch, 32, 32, 3});
  for (auto& x : images.data()) x = dist(rng);
  for (auto _ : state) benchmark::DoNotOptimize(model.forward(images).value().raw());
  state.counters["per_sample"] = benchmark::Counter(static_cast<double>(state.iterations() * batch),
                                                 benchmark::Counter::kIsRate | benchmark::Counter::kInvert);
}

}  // namespace

BENCHMARK_CAPTURE(forward, vit, Variant::vit)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(forward, mixer, Variant::mlp_mixer)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(forward, localvit, Variant::local_vit)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(forward, ninformer, Variant::ninformer)->Arg(1)->Arg(32)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
