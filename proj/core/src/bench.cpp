#include "ninformer/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <random>

namespace ninformer {

FlopBreakdown count_flops(const ModelConfig& cfg) {
  validate(cfg);
  using u64 = std::uint64_t;
  const u64 n = cfg.n_tokens(), d = cfg.d_model;
  const u64 mlp = cfg.d_mlp, tok = cfg.d_token_mix, ch = cfg.d_channel_mix;
  const u64 attention_core = 2 * n * n * d;
  const u64 attention = 4 * n * d * d + attention_core;
  const u64 mixer = 2 * n * d * tok + 2 * n * d * ch;

  FlopBreakdown f;
  f.embed = n * cfg.patch_dim() * d;
  switch (cfg.variant) {
    case Variant::vit:
      f.per_block = attention + 2 * n * d * mlp;
      f.attention_core = attention_core;
      break;
    case Variant::mlp_mixer:
      f.per_block = mixer;
      break;
    case Variant::local_vit:
      f.per_block = attention + 2 * n * d * mlp + 9 * n * mlp;
      f.attention_core = attention_core;
      break;
    case Variant::ninformer:
      f.per_block = mixer + n * d * d + n * d + 2 * n * d * mlp;
      break;
  }
  f.blocks = f.per_block * cfg.n_blocks;
  f.head = d * cfg.n_classes;
  f.total = f.embed + f.blocks + f.head;
  return f;
}

ModelConfig config_with_tokens(const ModelConfig& base, std::size_t n_tokens) {
  if (n_tokens == 0) throw ConfigError("token count must be positive");
  std::size_t rows = static_cast<std::size_t>(std::sqrt(static_cast<double>(n_tokens)));
  while (rows > 1 && n_tokens % rows != 0) --rows;
  ModelConfig cfg = base;
  cfg.image_height = rows * base.patch_size;
  cfg.image_width = (n_tokens / rows) * base.patch_size;
  validate(cfg);
  return cfg;
}

void validate(const TimingOptions& opts) {
  if (opts.batch_size == 0) throw ConfigError("benchmark batch size must be at least 1");
  if (opts.warmup_iters < 5) throw ConfigError("benchmark needs at least 5 warmup iterations");
  if (opts.measured_iters < 30) throw ConfigError("benchmark needs at least 30 measured iterations");
  if (opts.threads != 1) throw ConfigError("only single-threaded kernels are built; --threads must be 1");
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + (values[hi] - values[lo]) * frac;
}

BenchReport time_inference(const Model<float>& model, const TimingOptions& opts) {
  validate(opts);
  const auto& cfg = model.config();
  Tensor<float> images(Shape{opts.batch_size, cfg.image_height, cfg.image_width, cfg.channels});
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& v : images.data()) v = normal(rng);
  const Variable<float> input(images);

  float sink = 0;
  for (std::size_t i = 0; i < opts.warmup_iters; ++i) sink += model.forward(input).value()[0];

  BenchReport r;
  r.samples_ns.reserve(opts.measured_iters);
  for (std::size_t i = 0; i < opts.measured_iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto logits = model.forward(input);
    const auto t1 = std::chrono::steady_clock::now();
    sink += logits.value()[0];
    const double ns = std::chrono::duration<double, std::nano>(t1 - t0).count();
    r.samples_ns.push_back(ns / static_cast<double>(opts.batch_size));
  }
  if (!std::isfinite(sink)) throw NumericError("benchmark forward produced non-finite logits");
  r.variant = to_string(cfg.variant);
  r.input_shape = std::to_string(cfg.image_height) + "x" + std::to_string(cfg.image_width) + "x" +
                  std::to_string(cfg.channels);
  r.n_tokens = cfg.n_tokens();
  r.batch_size = opts.batch_size;
  r.threads = opts.threads;
  r.warmup_iters = opts.warmup_iters;
  r.measured_iters = opts.measured_iters;
  r.median_ns = quantile(r.samples_ns, 0.5);
  r.iqr_ns = quantile(r.samples_ns, 0.75) - quantile(r.samples_ns, 0.25);
  r.flops_per_sample = count_flops(cfg).total;
  return r;
}

std::vector<SweepRow> scaling_sweep(const ModelConfig& base, std::span<const Variant> variants,
                                    std::span<const std::size_t> n_tokens, const TimingOptions& opts) {
  std::vector<SweepRow> rows;
  for (auto v : variants) {
    for (auto n : n_tokens) {
      ModelConfig cfg = base;
      cfg.variant = v;
      cfg.use_positional_embedding = default_positional_embedding(v);
      cfg = config_with_tokens(cfg, n);
      const Model<float> model(cfg, opts.seed);
      const auto report = time_inference(model, opts);
      rows.push_back({to_string(v), n, count_flops(cfg).total, report.median_ns, report.iqr_ns});
    }
  }
  return rows;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = std::string(kSweepCsvHeader) + "\n";
  for (const auto& r : rows) {
    out += r.variant + "," + std::to_string(r.n_tokens) + "," + std::to_string(r.flops) + "," + fmt(r.median_ns) + "," +
           fmt(r.iqr_ns) + "\n";
  }
  return out;
}

std::string bench_csv(std::span<const BenchReport> reports) {
  std::string out = std::string(kBenchCsvHeader) + "\n";
  for (const auto& r : reports) {
    out += r.variant + "," + std::to_string(r.n_tokens) + "," + std::to_string(r.flops_per_sample) + "," +
           fmt(r.median_ns) + "," + fmt(r.iqr_ns) + "," + std::to_string(r.batch_size) + "," +
           std::to_string(r.threads) + "," + std::to_string(r.warmup_iters) + "," + std::to_string(r.measured_iters) +
           "," + r.input_shape + "\n";
  }
  return out;
}

std::string bench_json(std::span<const BenchReport> reports) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["variant"] = r.variant;
    j["input_shape"] = r.input_shape;
    j["n_tokens"] = r.n_tokens;
    j["batch_size"] = r.batch_size;
    j["threads"] = r.threads;
    j["warmup_iters"] = r.warmup_iters;
    j["measured_iters"] = r.measured_iters;
    j["median_ns"] = r.median_ns;
    j["iqr_ns"] = r.iqr_ns;
    j["flops_per_sample"] = r.flops_per_sample;
    j["samples_ns"] = r.samples_ns;
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

}  // namespace ninformer
