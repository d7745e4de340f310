#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ninformer/data.hpp"
#include "ninformer/model.hpp"
#include "ninformer/training.hpp"

namespace ninformer::cli {

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision parse_precision(const std::string& name);

// Everything needed to reproduce a run. Serialized next to the run outputs as
// resolved-config.json; feeding that file back through --config repeats the
// run exactly.
struct RunConfig {
  std::string preset;  // informational only
  DatasetName dataset = DatasetName::mnist;
  std::size_t train_subset = 0;  // 0 keeps the whole training split
  Precision precision = Precision::f32;
  ModelConfig model;
  TrainConfig train;
  std::optional<ChannelStats> normalization;
};

// Preset names are "<variant>-<dataset>-<scale>" with variant in
// {vit, mixer, localvit, ninformer}, dataset in {mnist, cifar10, cifar100}
// and scale in {paper, toy}.
//
// paper: ps 4, d 256, 4 blocks, 4 heads, every hidden width 512,
//        100 epochs, batch 128, Adam at 1e-3.
// toy:   ps 4, d 64, 2 blocks, 2 heads, every hidden width 128,
//        3 epochs on the first 10000 training samples.
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

// Batch size of the toy preset.
inline constexpr std::size_t kToyBatchSize = 16;

std::string to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);

// Applies "key=value" overrides. Keys are dotted paths into the JSON form
// ("model.d_model", "train.epochs", "train_subset"); a bare key is accepted
// when it names exactly one field of "model" or "train". Values are parsed as
// JSON and fall back to plain strings.
RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& overrides);

}  // namespace ninformer::cli
