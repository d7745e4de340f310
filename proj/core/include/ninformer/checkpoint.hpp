#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "ninformer/model.hpp"

namespace ninformer {

// Single-file model container, all integers little-endian:
//
//   "NINFCKPT"            8-byte magic
//   u32 version           currently 1
//   u32 n, n bytes        model config as JSON text
//   u32 count             number of parameter tensors
//   count x {
//     u32 n, n bytes      parameter name
//     u32 rank, rank x u32 dims
//     numel x f32         values, row-major
//   }
inline constexpr char kCheckpointMagic[8] = {'N', 'I', 'N', 'F', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::vector<std::pair<std::string, Tensor<float>>> params;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);

template <typename T>
Checkpoint make_checkpoint(const Model<T>& model);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into a model built from the same config. Throws
// ConfigError on any name, count or shape mismatch.
template <typename T>
void restore_parameters(Model<T>& model, const Checkpoint& ckpt);

template <typename T>
Model<T> model_from_checkpoint(const Checkpoint& ckpt) {
  Model<T> model(ckpt.config, 0);
  restore_parameters(model, ckpt);
  return model;
}

// FNV-1a over names, shapes and raw value bytes of every parameter.
template <typename T>
std::uint64_t fingerprint(const ParamStore<T>& params);

}  // namespace ninformer
