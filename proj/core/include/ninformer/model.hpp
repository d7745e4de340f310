#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "ninformer/autograd.hpp"
#include "ninformer/blocks.hpp"

namespace ninformer {

enum class Variant { vit, mlp_mixer, local_vit, ninformer };

std::string to_string(Variant v);
// Accepts the canonical names plus the short forms "mixer" and "localvit".
Variant parse_variant(const std::string& name);

struct ModelConfig {
  Variant variant = Variant::ninformer;
  std::size_t image_height = 28;
  std::size_t image_width = 28;
  std::size_t channels = 1;
  std::size_t patch_size = 4;
  std::size_t d_model = 256;
  std::size_t n_blocks = 4;
  std::size_t n_heads = 4;         // attention variants
  std::size_t d_mlp = 512;         // outer MLP width; conv-FFN width for Local-ViT
  std::size_t d_token_mix = 512;   // mixer variants
  std::size_t d_channel_mix = 512; // mixer variants
  std::size_t n_classes = 10;
  bool use_positional_embedding = false;
  bool sigmoid_gate = false;  // NiNformer GLU-style ablation

  std::size_t grid_height() const { return image_height / patch_size; }
  std::size_t grid_width() const { return image_width / patch_size; }
  std::size_t n_tokens() const { return grid_height() * grid_width(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Positional embeddings default on for the attention variants, off for the
// mixer-based ones whose token MLPs are position-aware already.
bool default_positional_embedding(Variant v);

// Throws ConfigError naming the first violated invariant.
void validate(const ModelConfig& cfg);

std::string to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& json_text);

// Closed-form number of scalar parameters for a configuration.
std::size_t expected_parameter_count(const ModelConfig& cfg);

template <typename T>
using BlockParams = std::variant<VitBlockParams<T>, MixerSubunitParams<T>, LocalVitBlockParams<T>, NinBlockParams<T>>;

// Patch embedding: images[b, h, w, c] -> tokens[b, (h/ps)(w/ps), d_model].
template <typename T>
Variable<T> patch_embed(const Variable<T>& images, std::size_t patch_size, const LinearParams<T>& embed);

// Patch embedding -> B blocks -> global average pooling -> linear head.
template <typename T>
class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed);
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const noexcept { return config_; }
  ParamStore<T>& params() noexcept { return params_; }
  const ParamStore<T>& params() const noexcept { return params_; }
  const std::vector<BlockParams<T>>& blocks() const noexcept { return blocks_; }
  const LinearParams<T>& embedding() const noexcept { return embed_; }
  const LinearParams<T>& head() const noexcept { return head_; }

  // images[b, h, w, c] -> logits[b, n_classes]. Softmax is left to the loss.
  Variable<T> forward(const Tensor<T>& images) const;
  Variable<T> forward(const Variable<T>& images) const;

 private:
  ModelConfig config_;
  ParamStore<T> params_;
  LinearParams<T> embed_;
  Variable<T> position_;
  std::vector<BlockParams<T>> blocks_;
  LinearParams<T> head_;
};

template <typename T>
Model<T> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return Model<T>(cfg, seed);
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace ninformer
