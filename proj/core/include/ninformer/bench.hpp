#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ninformer/model.hpp"

namespace ninformer {

// Closed-form multiply-accumulate counts per sample. The counting convention
// matches MacCounter: contractions count one MAC per product term, the NiN
// gate product counts one per element, everything else is free.
//
//   embed       n * ps^2 c * d
//   vit         4 n d^2 + 2 n^2 d + 2 n d d_mlp
//   mlp_mixer   2 n d d_tok + 2 n d d_ch
//   local_vit   4 n d^2 + 2 n^2 d + 2 n d d_mlp + 9 n d_mlp
//   ninformer   2 n d d_tok + 2 n d d_ch + n d^2 + n d + 2 n d d_mlp
//   head        d * C
//
// The 2 n^2 d term is the score and mixing product of attention,
// 2 * heads * n^2 * d_k, and is the only superlinear term in n.
struct FlopBreakdown {
  std::uint64_t embed = 0;
  std::uint64_t per_block = 0;
  std::uint64_t attention_core = 0;  // per block, inside per_block
  std::uint64_t blocks = 0;
  std::uint64_t head = 0;
  std::uint64_t total = 0;
};

FlopBreakdown count_flops(const ModelConfig& cfg);

// Same configuration with the image resized so the patch grid holds exactly
// `n_tokens` tokens, using the most nearly square factorization.
ModelConfig config_with_tokens(const ModelConfig& base, std::size_t n_tokens);

struct TimingOptions {
  std::size_t batch_size = 1;
  std::size_t warmup_iters = 5;
  std::size_t measured_iters = 30;
  std::size_t threads = 1;
  std::uint64_t seed = 0;
};

void validate(const TimingOptions& opts);

struct BenchReport {
  std::string variant;
  std::string input_shape;  // e.g. "32x32x3"
  std::size_t n_tokens = 0;
  std::size_t batch_size = 0;
  std::size_t threads = 1;
  std::size_t warmup_iters = 0;
  std::size_t measured_iters = 0;
  double median_ns = 0;  // per sample
  double iqr_ns = 0;     // per sample
  std::uint64_t flops_per_sample = 0;
  std::vector<double> samples_ns;  // per-sample time of each measured iteration
};

// Median and interquartile range (linear-interpolated quantiles).
double quantile(std::vector<double> values, double q);

// Times forward passes on synthetic Gaussian inputs with no gradient tape.
BenchReport time_inference(const Model<float>& model, const TimingOptions& opts);

struct SweepRow {
  std::string variant;
  std::size_t n_tokens = 0;
  std::uint64_t flops = 0;
  double median_ns = 0;
  double iqr_ns = 0;
};

// One row per (variant, n): each row builds `base` with that variant and
// token count, counts its FLOPs and times it.
std::vector<SweepRow> scaling_sweep(const ModelConfig& base, std::span<const Variant> variants,
                                    std::span<const std::size_t> n_tokens, const TimingOptions& opts);

inline constexpr const char* kSweepCsvHeader = "variant,n_tokens,flops,median_ns,iqr_ns";
inline constexpr const char* kBenchCsvHeader =
    "variant,n_tokens,flops,median_ns,iqr_ns,batch_size,threads,warmup_iters,measured_iters,input_shape";

std::string sweep_csv(std::span<const SweepRow> rows);
std::string bench_csv(std::span<const BenchReport> reports);
std::string bench_json(std::span<const BenchReport> reports);

}  // namespace ninformer
