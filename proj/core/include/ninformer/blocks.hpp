#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>

#include "ninformer/autograd.hpp"

namespace ninformer {

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitStddev = 0.02;

// Creates named parameters in a store with the framework's initialization:
// weights ~ N(0, 0.02^2) truncated at two standard deviations, biases zero,
// norm scale one and shift zero.
template <typename T>
class ParamBuilder {
 public:
  ParamBuilder(ParamStore<T>& store, std::uint64_t seed) : store_(store), rng_(seed) {}

  Variable<T> weight(const std::string& name, Shape shape) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> normal(0.0, kInitStddev);
    for (auto& v : t.data()) {
      double draw;
      do {
        draw = normal(rng_);
      } while (draw < -2 * kInitStddev || draw > 2 * kInitStddev);
      v = static_cast<T>(draw);
    }
    return store_.add(name, std::move(t));
  }
  Variable<T> zeros(const std::string& name, Shape shape) { return store_.add(name, Tensor<T>(std::move(shape))); }
  Variable<T> ones(const std::string& name, Shape shape) {
    return store_.add(name, Tensor<T>(std::move(shape), T{1}));
  }

 private:
  ParamStore<T>& store_;
  std::mt19937_64 rng_;
};

template <typename T>
struct LinearParams {
  Variable<T> weight;  // [in, out]
  Variable<T> bias;    // [out]
};

template <typename T>
struct NormParams {
  Variable<T> gamma;
  Variable<T> beta;
};

// Two-layer perceptron with GELU between the layers.
template <typename T>
struct MlpParams {
  LinearParams<T> fc1;
  LinearParams<T> fc2;
};

template <typename T>
struct AttentionParams {
  LinearParams<T> query, key, value, output;  // each [d_model, d_model]
  std::size_t n_heads = 1;
};

// One MLP-Mixer block: token mixing over the sequence axis followed by
// channel mixing over the embedding axis, each pre-normed and residual.
template <typename T>
struct MixerSubunitParams {
  NormParams<T> token_norm;
  MlpParams<T> token_mlp;  // n_tokens -> d_token_mix -> n_tokens
  NormParams<T> channel_norm;
  MlpParams<T> channel_mlp;  // d_model -> d_channel_mix -> d_model
};

// NiN gating unit: an inner mixer block produces the gate that multiplies a
// per-token linear projection of the same input.
template <typename T>
struct GatingParams {
  MixerSubunitParams<T> mixer;
  LinearParams<T> projection;  // [d_model, d_model]
  bool sigmoid_gate = false;   // GLU-style ablation; the block itself uses the raw gate
};

// Inverted-residual feed-forward: 1x1 expand, depthwise conv on the patch
// grid, 1x1 project.
template <typename T>
struct ConvFfnParams {
  LinearParams<T> expand;
  Variable<T> depthwise_kernel;  // [k, k, d_hidden]
  Variable<T> depthwise_bias;    // [d_hidden]
  LinearParams<T> project;
};

template <typename T>
struct VitBlockParams {
  NormParams<T> norm1;
  AttentionParams<T> attention;
  NormParams<T> norm2;
  MlpParams<T> mlp;
};

template <typename T>
struct LocalVitBlockParams {
  NormParams<T> norm1;
  AttentionParams<T> attention;
  NormParams<T> norm2;
  ConvFfnParams<T> conv;
};

template <typename T>
struct NinBlockParams {
  NormParams<T> norm1;
  GatingParams<T> gating;
  NormParams<T> norm2;
  MlpParams<T> mlp;
};

struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t tokens() const { return height * width; }
};

// Parameter factories. Names are `prefix` + "." + component path.
template <typename T>
LinearParams<T> make_linear(ParamBuilder<T>& pb, const std::string& prefix, std::size_t in, std::size_t out);
template <typename T>
NormParams<T> make_norm(ParamBuilder<T>& pb, const std::string& prefix, std::size_t d);
template <typename T>
MlpParams<T> make_mlp(ParamBuilder<T>& pb, const std::string& prefix, std::size_t in, std::size_t hidden,
                      std::size_t out);
template <typename T>
AttentionParams<T> make_attention(ParamBuilder<T>& pb, const std::string& prefix, std::size_t d_model,
                                  std::size_t n_heads);
template <typename T>
MixerSubunitParams<T> make_mixer(ParamBuilder<T>& pb, const std::string& prefix, std::size_t n_tokens,
                                 std::size_t d_model, std::size_t d_token_mix, std::size_t d_channel_mix);
template <typename T>
GatingParams<T> make_gating(ParamBuilder<T>& pb, const std::string& prefix, std::size_t n_tokens,
                            std::size_t d_model, std::size_t d_token_mix, std::size_t d_channel_mix);
template <typename T>
ConvFfnParams<T> make_conv_ffn(ParamBuilder<T>& pb, const std::string& prefix, std::size_t d_model,
                               std::size_t d_hidden, std::size_t kernel_size = 3);
template <typename T>
VitBlockParams<T> make_vit_block(ParamBuilder<T>& pb, const std::string& prefix, std::size_t d_model,
                                 std::size_t n_heads, std::size_t d_mlp);
template <typename T>
LocalVitBlockParams<T> make_localvit_block(ParamBuilder<T>& pb, const std::string& prefix, std::size_t d_model,
                                           std::size_t n_heads, std::size_t d_hidden);
template <typename T>
NinBlockParams<T> make_nin_block(ParamBuilder<T>& pb, const std::string& prefix, std::size_t n_tokens,
                                 std::size_t d_model, std::size_t d_mlp, std::size_t d_token_mix,
                                 std::size_t d_channel_mix);

// All blocks map x[b, n, d_model] to the same shape.

template <typename T>
Variable<T> mlp(const Variable<T>& x, const MlpParams<T>& p);

template <typename T>
Variable<T> norm(const Variable<T>& x, const NormParams<T>& p);

// Multi-head scaled dot-product attention with output projection.
template <typename T>
Variable<T> attention(const Variable<T>& x, const AttentionParams<T>& p);

// Attention probabilities [b, heads, n, n] for inspection.
template <typename T>
Tensor<T> attention_weights(const Variable<T>& x, const AttentionParams<T>& p);

template <typename T>
Variable<T> vit_block(const Variable<T>& x, const VitBlockParams<T>& p);

template <typename T>
Variable<T> mixer_block(const Variable<T>& x, const MixerSubunitParams<T>& p);

// gate * (input W + b); `gate` must match the projection's output shape.
template <typename T>
Variable<T> gated_projection(const Variable<T>& gate, const Variable<T>& input, const LinearParams<T>& projection,
                             bool sigmoid_gate = false);

template <typename T>
Variable<T> nin_gating(const Variable<T>& input, const GatingParams<T>& p);

template <typename T>
Variable<T> nin_block(const Variable<T>& x, const NinBlockParams<T>& p);

// The residual is added by the caller.
template <typename T>
Variable<T> conv_ffn(const Variable<T>& x, Grid grid, const ConvFfnParams<T>& p);

template <typename T>
Variable<T> localvit_block(const Variable<T>& x, Grid grid, const LocalVitBlockParams<T>& p);

}  // namespace ninformer
