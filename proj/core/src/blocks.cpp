#include "ninformer/blocks.hpp"

#include <cmath>

#include "ninformer/ops.hpp"

namespace ninformer {

namespace {

void require_sequence(const char* who, const Shape& s) {
  if (s.size() != 3) throw DimensionError(std::string(who) + ": expected [batch, tokens, d_model], got " + to_string(s));
}

}  // namespace

template <typename T>
LinearParams<T> make_linear(ParamBuilder<T>& pb, const std::string& prefix, std::size_t in, std::size_t out) {
  return {pb.weight(prefix + ".weight", {in, out}), pb.zeros(prefix + ".bias", {out})};
}

template <typename T>
NormParams<T> make_norm(ParamBuilder<T>& pb, const std::string& prefix, std::size_t d) {
  return {pb.ones(prefix + ".gamma", {d}), pb.zeros(prefix + ".beta", {d})};
}

template <typename T>
MlpParams<T> make_mlp(ParamBuilder<T>& pb, const std::string& prefix, std::size_t in, std::size_t hidden,
                      std::size_t out) {
  MlpParams<T> p;
  p.fc1 = make_linear(pb, prefix + ".fc1", in, hidden);
  p.fc2 = make_linear(pb, prefix + ".fc2", hidden, out);
  return p;
}

template <typename T>
AttentionParams<T> make_attention(ParamBuilder<T>& pb, const std::string& prefix, std::size_t d_model,
                                  std::size_t n_heads) {
  if (n_heads == 0 || d_model % n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " +
                      std::to_string(n_heads));
  }
  AttentionParams<T> p;
  p.query = make_linear(pb, prefix + ".query", d_model, d_model);
  p.key = make_linear(pb, prefix + ".key", d_model, d_model);
  p.value = make_linear(pb, prefix + ".value", d_model, d_model);
  p.output = make_linear(pb, prefix + ".output", d_model, d_model);
  p.n_heads = n_heads;
  return p;
}

template <typename T>
MixerSubunitParams<T> make_mixer(ParamBuilder<T>& pb, const std::string& prefix, std::size_t n_tokens,
                                 std::size_t d_model, std::size_t d_token_mix, std::size_t d_channel_mix) {
  MixerSubunitParams<T> p;
  p.token_norm = make_norm(pb, prefix + ".token_norm", d_model);
  p.token_mlp = make_mlp(pb, prefix + ".token_mlp", n_tokens, d_token_mix, n_tokens);
  p.channel_norm = make_norm(pb, prefix + ".channel_norm", d_model);
  p.channel_mlp = make_mlp(pb, prefix + ".channel_mlp", d_model, d_channel_mix, d_model);
  return p;
}

template <typename T>
GatingParams<T> make_gating(ParamBuilder<T>& pb, const std::string& prefix, std::size_t n_tokens,
                            std::size_t d_model, std::size_t d_token_mix, std::size_t d_channel_mix) {
  GatingParams<T> p;
  p.mixer = make_mixer(pb, prefix + ".mixer", n_tokens, d_model, d_token_mix, d_channel_mix);
  p.projection = make_linear(pb, prefix + ".projection", d_model, d_model);
  return p;
}

template <typename T>
ConvFfnParams<T> make_conv_ffn(ParamBuilder<T>& pb, const std::string& prefix, std::size_t d_model,
                               std::size_t d_hidden, std::size_t kernel_size) {
  if (kernel_size % 2 == 0) throw ConfigError("depthwise kernel size must be odd");
  ConvFfnParams<T> p;
  p.expand = make_linear(pb, prefix + ".expand", d_model, d_hidden);
  p.depthwise_kernel = pb.weight(prefix + ".depthwise.kernel", {kernel_size, kernel_size, d_hidden});
  p.depthwise_bias = pb.zeros(prefix + ".depthwise.bias", {d_hidden});
  p.project = make_linear(pb, prefix + ".project", d_hidden, d_model);
  return p;
}

template <typename T>
VitBlockParams<T> make_vit_block(ParamBuilder<T>& pb, const std::string& prefix, std::size_t d_model,
                                 std::size_t n_heads, std::size_t d_mlp) {
  VitBlockParams<T> p;
  p.norm1 = make_norm(pb, prefix + ".norm1", d_model);
  p.attention = make_attention(pb, prefix + ".attention", d_model, n_heads);
  p.norm2 = make_norm(pb, prefix + ".norm2", d_model);
  p.mlp = make_mlp(pb, prefix + ".mlp", d_model, d_mlp, d_model);
  return p;
}

template <typename T>
LocalVitBlockParams<T> make_localvit_block(ParamBuilder<T>& pb, const std::string& prefix, std::size_t d_model,
                                           std::size_t n_heads, std::size_t d_hidden) {
  LocalVitBlockParams<T> p;
  p.norm1 = make_norm(pb, prefix + ".norm1", d_model);
  p.attention = make_attention(pb, prefix + ".attention", d_model, n_heads);
  p.norm2 = make_norm(pb, prefix + ".norm2", d_model);
  p.conv = make_conv_ffn(pb, prefix + ".conv", d_model, d_hidden);
  return p;
}

template <typename T>
NinBlockParams<T> make_nin_block(ParamBuilder<T>& pb, const std::string& prefix, std::size_t n_tokens,
                                 std::size_t d_model, std::size_t d_mlp, std::size_t d_token_mix,
                                 std::size_t d_channel_mix) {
  NinBlockParams<T> p;
  p.norm1 = make_norm(pb, prefix + ".norm1", d_model);
  p.gating = make_gating(pb, prefix + ".gating", n_tokens, d_model, d_token_mix, d_channel_mix);
  p.norm2 = make_norm(pb, prefix + ".norm2", d_model);
  p.mlp = make_mlp(pb, prefix + ".mlp", d_model, d_mlp, d_model);
  return p;
}

template <typename T>
Variable<T> mlp(const Variable<T>& x, const MlpParams<T>& p) {
  return linear(gelu(linear(x, p.fc1.weight, p.fc1.bias)), p.fc2.weight, p.fc2.bias);
}

template <typename T>
Variable<T> norm(const Variable<T>& x, const NormParams<T>& p) {
  return layer_norm(x, p.gamma, p.beta, static_cast<T>(kLayerNormEps));
}

namespace {

// Splits [b, n, d] into heads [b, h, n, d/h].
template <typename T>
Variable<T> split_heads(const Variable<T>& x, std::size_t heads, std::vector<std::size_t> order) {
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  return permute(reshape(x, {b, n, heads, d / heads}), order);
}

template <typename T>
Variable<T> attention_probs(const Variable<T>& x, const AttentionParams<T>& p, Variable<T>* values) {
  require_sequence("attention", x.shape());
  const std::size_t d = x.dim(2);
  if (p.query.weight.shape() != Shape{d, d}) {
    throw DimensionError("attention: d_model " + std::to_string(d) + " does not match query weight " +
                         to_string(p.query.weight.shape()));
  }
  const std::size_t h = p.n_heads;
  const std::size_t dk = d / h;
  auto q = split_heads(linear(x, p.query.weight, p.query.bias), h, {0, 2, 1, 3});
  auto kt = split_heads(linear(x, p.key.weight, p.key.bias), h, {0, 2, 3, 1});
  *values = split_heads(linear(x, p.value.weight, p.value.bias), h, {0, 2, 1, 3});
  auto scores = scale(matmul(q, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
  return softmax(scores, -1);
}

}  // namespace

template <typename T>
Variable<T> attention(const Variable<T>& x, const AttentionParams<T>& p) {
  Variable<T> v;
  auto probs = attention_probs(x, p, &v);
  auto ctx = matmul(probs, v);  // [b, h, n, dk]
  const std::size_t b = x.dim(0), n = x.dim(1), d = x.dim(2);
  auto merged = reshape(permute(ctx, {0, 2, 1, 3}), {b, n, d});
  return linear(merged, p.output.weight, p.output.bias);
}

template <typename T>
Tensor<T> attention_weights(const Variable<T>& x, const AttentionParams<T>& p) {
  Variable<T> v;
  return attention_probs(x, p, &v).value();
}

template <typename T>
Variable<T> vit_block(const Variable<T>& x, const VitBlockParams<T>& p) {
  require_sequence("vit_block", x.shape());
  auto y = add(attention(norm(x, p.norm1), p.attention), x);
  return add(mlp(norm(y, p.norm2), p.mlp), y);
}

template <typename T>
Variable<T> mixer_block(const Variable<T>& x, const MixerSubunitParams<T>& p) {
  require_sequence("mixer_block", x.shape());
  const std::size_t width = p.token_mlp.fc1.weight.dim(0);
  if (x.dim(1) != width) {
    throw DimensionError("mixer_block: input has " + std::to_string(x.dim(1)) +
                         " tokens but the token-mixing MLP is sized for " + std::to_string(width));
  }
  auto token_mixed = transpose_last2(mlp(transpose_last2(norm(x, p.token_norm)), p.token_mlp));
  auto y = add(token_mixed, x);
  return add(mlp(norm(y, p.channel_norm), p.channel_mlp), y);
}

template <typename T>
Variable<T> gated_projection(const Variable<T>& gate, const Variable<T>& input, const LinearParams<T>& projection,
                             bool sigmoid_gate) {
  auto projected = linear(input, projection.weight, projection.bias);
  return mul(sigmoid_gate ? sigmoid(gate) : gate, projected);
}

template <typename T>
Variable<T> nin_gating(const Variable<T>& input, const GatingParams<T>& p) {
  return gated_projection(mixer_block(input, p.mixer), input, p.projection, p.sigmoid_gate);
}

template <typename T>
Variable<T> nin_block(const Variable<T>& x, const NinBlockParams<T>& p) {
  require_sequence("nin_block", x.shape());
  auto y = add(nin_gating(norm(x, p.norm1), p.gating), x);
  return add(mlp(norm(y, p.norm2), p.mlp), y);
}

template <typename T>
Variable<T> conv_ffn(const Variable<T>& x, Grid grid, const ConvFfnParams<T>& p) {
  require_sequence("conv_ffn", x.shape());
  if (x.dim(1) != grid.tokens()) {
    throw DimensionError("conv_ffn: " + std::to_string(x.dim(1)) + " tokens cannot form a " +
                         std::to_string(grid.height) + "x" + std::to_string(grid.width) + " grid");
  }
  const std::size_t b = x.dim(0), n = x.dim(1);
  auto hidden = gelu(linear(x, p.expand.weight, p.expand.bias));
  const std::size_t dh = hidden.dim(2);
  auto spatial = reshape(hidden, {b, grid.height, grid.width, dh});
  auto mixed = gelu(depthwise_conv2d(spatial, p.depthwise_kernel, p.depthwise_bias));
  return linear(reshape(mixed, {b, n, dh}), p.project.weight, p.project.bias);
}

template <typename T>
Variable<T> localvit_block(const Variable<T>& x, Grid grid, const LocalVitBlockParams<T>& p) {
  require_sequence("localvit_block", x.shape());
  auto y = add(attention(norm(x, p.norm1), p.attention), x);
  return add(conv_ffn(norm(y, p.norm2), grid, p.conv), y);
}

#define NINFORMER_INSTANTIATE_BLOCKS(T)                                                                          \
  template LinearParams<T> make_linear(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t);          \
  template NormParams<T> make_norm(ParamBuilder<T>&, const std::string&, std::size_t);                           \
  template MlpParams<T> make_mlp(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t, std::size_t);   \
  template AttentionParams<T> make_attention(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t);    \
  template MixerSubunitParams<T> make_mixer(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t,      \
                                            std::size_t, std::size_t);                                           \
  template GatingParams<T> make_gating(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t,           \
                                       std::size_t, std::size_t);                                                \
  template ConvFfnParams<T> make_conv_ffn(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t,        \
                                          std::size_t);                                                          \
  template VitBlockParams<T> make_vit_block(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t,      \
                                            std::size_t);                                                        \
  template LocalVitBlockParams<T> make_localvit_block(ParamBuilder<T>&, const std::string&, std::size_t,         \
                                                      std::size_t, std::size_t);                                 \
  template NinBlockParams<T> make_nin_block(ParamBuilder<T>&, const std::string&, std::size_t, std::size_t,      \
                                            std::size_t, std::size_t, std::size_t);                              \
  template Variable<T> mlp(const Variable<T>&, const MlpParams<T>&);                                             \
  template Variable<T> norm(const Variable<T>&, const NormParams<T>&);                                           \
  template Variable<T> attention(const Variable<T>&, const AttentionParams<T>&);                                 \
  template Tensor<T> attention_weights(const Variable<T>&, const AttentionParams<T>&);                           \
  template Variable<T> vit_block(const Variable<T>&, const VitBlockParams<T>&);                                  \
  template Variable<T> mixer_block(const Variable<T>&, const MixerSubunitParams<T>&);                            \
  template Variable<T> gated_projection(const Variable<T>&, const Variable<T>&, const LinearParams<T>&, bool);   \
  template Variable<T> nin_gating(const Variable<T>&, const GatingParams<T>&);                                   \
  template Variable<T> nin_block(const Variable<T>&, const NinBlockParams<T>&);                                  \
  template Variable<T> conv_ffn(const Variable<T>&, Grid, const ConvFfnParams<T>&);                              \
  template Variable<T> localvit_block(const Variable<T>&, Grid, const LocalVitBlockParams<T>&);

NINFORMER_INSTANTIATE_BLOCKS(float)
NINFORMER_INSTANTIATE_BLOCKS(double)

#undef NINFORMER_INSTANTIATE_BLOCKS

}  // namespace ninformer
