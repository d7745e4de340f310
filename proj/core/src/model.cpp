#include "ninformer/model.hpp"

#include <json.hpp>

#include "ninformer/ops.hpp"

namespace ninformer {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::vit:
      return "vit";
    case Variant::mlp_mixer:
      return "mlp_mixer";
    case Variant::local_vit:
      return "local_vit";
    case Variant::ninformer:
      return "ninformer";
  }
  return "unknown";
}

Variant parse_variant(const std::string& name) {
  if (name == "vit") return Variant::vit;
  if (name == "mlp_mixer" || name == "mixer") return Variant::mlp_mixer;
  if (name == "local_vit" || name == "localvit") return Variant::local_vit;
  if (name == "ninformer") return Variant::ninformer;
  throw ConfigError("unknown model variant: " + name);
}

bool default_positional_embedding(Variant v) { return v == Variant::vit || v == Variant::local_vit; }

static bool uses_attention(Variant v) { return v == Variant::vit || v == Variant::local_vit; }

void validate(const ModelConfig& cfg) {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (cfg.image_height == 0 || cfg.image_width == 0 || cfg.channels == 0) fail("image dimensions must be positive");
  if (cfg.patch_size == 0) fail("patch_size must be positive");
  if (cfg.image_height % cfg.patch_size != 0 || cfg.image_width % cfg.patch_size != 0) {
    fail("image " + std::to_string(cfg.image_height) + "x" + std::to_string(cfg.image_width) +
         " is not divisible by patch_size " + std::to_string(cfg.patch_size));
  }
  if (cfg.d_model == 0) fail("d_model must be positive");
  if (cfg.n_classes == 0) fail("n_classes must be positive");
  if (uses_attention(cfg.variant)) {
    if (cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0) {
      fail("d_model " + std::to_string(cfg.d_model) + " is not divisible by n_heads " + std::to_string(cfg.n_heads));
    }
  }
  if (cfg.variant != Variant::mlp_mixer && cfg.d_mlp == 0) fail("d_mlp must be positive");
  if ((cfg.variant == Variant::mlp_mixer || cfg.variant == Variant::ninformer) &&
      (cfg.d_token_mix == 0 || cfg.d_channel_mix == 0)) {
    fail("token and channel mixing widths must be positive");
  }
}

std::string to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["variant"] = to_string(cfg.variant);
  j["image_height"] = cfg.image_height;
  j["image_width"] = cfg.image_width;
  j["channels"] = cfg.channels;
  j["patch_size"] = cfg.patch_size;
  j["d_model"] = cfg.d_model;
  j["n_blocks"] = cfg.n_blocks;
  j["n_heads"] = cfg.n_heads;
  j["d_mlp"] = cfg.d_mlp;
  j["d_token_mix"] = cfg.d_token_mix;
  j["d_channel_mix"] = cfg.d_channel_mix;
  j["n_classes"] = cfg.n_classes;
  j["use_positional_embedding"] = cfg.use_positional_embedding;
  j["sigmoid_gate"] = cfg.sigmoid_gate;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config is not valid JSON: ") + e.what());
  }
  ModelConfig cfg;
  try {
    cfg.variant = parse_variant(j.at("variant").get<std::string>());
    cfg.image_height = j.at("image_height").get<std::size_t>();
    cfg.image_width = j.at("image_width").get<std::size_t>();
    cfg.channels = j.at("channels").get<std::size_t>();
    cfg.patch_size = j.at("patch_size").get<std::size_t>();
    cfg.d_model = j.at("d_model").get<std::size_t>();
    cfg.n_blocks = j.at("n_blocks").get<std::size_t>();
    cfg.n_heads = j.at("n_heads").get<std::size_t>();
    cfg.d_mlp = j.at("d_mlp").get<std::size_t>();
    cfg.d_token_mix = j.at("d_token_mix").get<std::size_t>();
    cfg.d_channel_mix = j.at("d_channel_mix").get<std::size_t>();
    cfg.n_classes = j.at("n_classes").get<std::size_t>();
    cfg.use_positional_embedding = j.at("use_positional_embedding").get<bool>();
    cfg.sigmoid_gate = j.value("sigmoid_gate", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config field error: ") + e.what());
  }
  return cfg;
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
  validate(cfg);
  const std::size_t d = cfg.d_model;
  const std::size_t n = cfg.n_tokens();
  auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
  auto norm = [](std::size_t width) { return 2 * width; };
  auto mlp = [&](std::size_t in, std::size_t hidden, std::size_t out) { return linear(in, hidden) + linear(hidden, out); };
  const std::size_t attention = 4 * linear(d, d);
  const std::size_t mixer = 2 * norm(d) + mlp(n, cfg.d_token_mix, n) + mlp(d, cfg.d_channel_mix, d);

  std::size_t block = 0;
  switch (cfg.variant) {
    case Variant::vit:
      block = 2 * norm(d) + attention + mlp(d, cfg.d_mlp, d);
      break;
    case Variant::mlp_mixer:
      block = mixer;
      break;
    case Variant::local_vit:
      block = 2 * norm(d) + attention + linear(d, cfg.d_mlp) + 9 * cfg.d_mlp + cfg.d_mlp + linear(cfg.d_mlp, d);
      break;
    case Variant::ninformer:
      block = 2 * norm(d) + mixer + linear(d, d) + mlp(d, cfg.d_mlp, d);
      break;
  }
  std::size_t total = linear(cfg.patch_dim(), d) + cfg.n_blocks * block + linear(d, cfg.n_classes);
  if (cfg.use_positional_embedding) total += n * d;
  return total;
}

template <typename T>
Variable<T> patch_embed(const Variable<T>& images, std::size_t patch_size, const LinearParams<T>& embed) {
  return linear(extract_patches(images, patch_size), embed.weight, embed.bias);
}

template <typename T>
Model<T>::Model(ModelConfig cfg, std::uint64_t seed) : config_(std::move(cfg)) {
  validate(config_);
  ParamBuilder<T> pb(params_, seed);
  const auto& c = config_;
  const std::size_t n = c.n_tokens();
  embed_ = make_linear(pb, "embed", c.patch_dim(), c.d_model);
  if (c.use_positional_embedding) position_ = pb.weight("position", {n, c.d_model});
  for (std::size_t i = 0; i < c.n_blocks; ++i) {
    const std::string prefix = "block" + std::to_string(i);
    switch (c.variant) {
      case Variant::vit:
        blocks_.emplace_back(make_vit_block(pb, prefix, c.d_model, c.n_heads, c.d_mlp));
        break;
      case Variant::mlp_mixer:
        blocks_.emplace_back(make_mixer(pb, prefix, n, c.d_model, c.d_token_mix, c.d_channel_mix));
        break;
      case Variant::local_vit:
        blocks_.emplace_back(make_localvit_block(pb, prefix, c.d_model, c.n_heads, c.d_mlp));
        break;
      case Variant::ninformer: {
        auto block = make_nin_block(pb, prefix, n, c.d_model, c.d_mlp, c.d_token_mix, c.d_channel_mix);
        block.gating.sigmoid_gate = c.sigmoid_gate;
        blocks_.emplace_back(std::move(block));
        break;
      }
    }
  }
  head_ = make_linear(pb, "head", c.d_model, c.n_classes);
}

template <typename T>
Variable<T> Model<T>::forward(const Tensor<T>& images) const {
  return forward(Variable<T>(images));
}

template <typename T>
Variable<T> Model<T>::forward(const Variable<T>& images) const {
  const auto& c = config_;
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != c.image_height || s[2] != c.image_width || s[3] != c.channels) {
    throw DimensionError("model expects images [b, " + std::to_string(c.image_height) + ", " +
                         std::to_string(c.image_width) + ", " + std::to_string(c.channels) + "], got " +
                         to_string(s));
  }
  auto x = patch_embed(images, c.patch_size, embed_);
  if (position_.defined()) x = add_broadcast(x, position_);
  const Grid grid{c.grid_height(), c.grid_width()};
  for (const auto& block : blocks_) {
    x = std::visit(
        [&](const auto& p) -> Variable<T> {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, VitBlockParams<T>>) {
            return vit_block(x, p);
          } else if constexpr (std::is_same_v<P, MixerSubunitParams<T>>) {
            return mixer_block(x, p);
          } else if constexpr (std::is_same_v<P, LocalVitBlockParams<T>>) {
            return localvit_block(x, grid, p);
          } else {
            return nin_block(x, p);
          }
        },
        block);
  }
  auto pooled = mean_axis(x, 1);
  return linear(pooled, head_.weight, head_.bias);
}

template Variable<float> patch_embed(const Variable<float>&, std::size_t, const LinearParams<float>&);
template Variable<double> patch_embed(const Variable<double>&, std::size_t, const LinearParams<double>&);
template class Model<float>;
template class Model<double>;

}  // namespace ninformer
