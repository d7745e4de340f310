#include "ninformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

#include "ninformer/blocks.hpp"
#include "ninformer/model.hpp"
#include "ninformer/ops.hpp"
#include "ninformer/training.hpp"

namespace ninformer {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelativeErrorFloor});
  return std::abs(analytic - numeric) / denom;
}

double max_gradient_error(const std::function<Variable<double>()>& loss_fn, const std::vector<Variable<double>>& leaves,
                          double h, std::size_t* values_checked) {
  for (auto leaf : leaves) leaf.zero_grad();
  std::vector<Tensor<double>> analytic;
  {
    GradTape<double> tape;
    auto loss = loss_fn();
    tape.backward(loss);
  }
  for (const auto& leaf : leaves) analytic.push_back(leaf.grad());

  double worst = 0;
  std::size_t checked = 0;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    Variable<double> leaf = leaves[l];
    auto values = leaf.mutable_value().data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = loss_fn().value().item();
      values[i] = saved - h;
      const double minus = loss_fn().value().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2 * h);
      worst = std::max(worst, relative_error(analytic[l][i], numeric));
      ++checked;
    }
  }
  if (values_checked) *values_checked = checked;
  return worst;
}

namespace {

using Rng = std::mt19937_64;
using Var = Variable<double>;

Tensor<double> uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

Var leaf(Shape shape, Rng& rng, double scale = 1.0) { return Var(uniform(std::move(shape), rng, -scale, scale), true); }

// Replaces small initial weights with O(1) values so every path carries signal.
void randomize(const ParamStore<double>& params, Rng& rng) {
  for (const auto& [name, var] : params) {
    Var v = var;
    auto t = uniform(v.shape(), rng, -0.5, 0.5);
    if (name.ends_with(".gamma")) {
      for (auto& x : t.data()) x += 1.0;
    }
    v.mutable_value() = std::move(t);
  }
}

std::vector<Var> leaves_of(const ParamStore<double>& params) {
  std::vector<Var> out;
  for (const auto& [name, var] : params) out.push_back(var);
  return out;
}

struct Case {
  std::function<Var()> loss;
  std::vector<Var> leaves;
  std::shared_ptr<void> keep_alive;  // owns parameter stores / models
};

constexpr std::size_t kTokens = 4, kWidth = 8, kHeads = 2, kHidden = 16;

Case block_case(Rng& rng, const std::string& which) {
  auto store = std::make_shared<ParamStore<double>>();
  ParamBuilder<double> pb(*store, rng());
  auto x = leaf({1, kTokens, kWidth}, rng);
  const Var r(uniform({1, kTokens, kWidth}, rng));
  const Grid grid{2, 2};
  std::function<Var(const Var&)> f;
  if (which == "attention") {
    auto p = make_attention(pb, "attention", kWidth, kHeads);
    f = [p](const Var& in) { return attention(in, p); };
  } else if (which == "mixer_block") {
    auto p = make_mixer(pb, "mixer", kTokens, kWidth, kHidden, kHidden);
    f = [p](const Var& in) { return mixer_block(in, p); };
  } else if (which == "conv_ffn") {
    auto p = make_conv_ffn(pb, "conv", kWidth, kHidden);
    f = [p, grid](const Var& in) { return conv_ffn(in, grid, p); };
  } else if (which == "nin_gating") {
    auto p = make_gating(pb, "gating", kTokens, kWidth, kHidden, kHidden);
    f = [p](const Var& in) { return nin_gating(in, p); };
  } else if (which == "vit_block") {
    auto p = make_vit_block(pb, "block", kWidth, kHeads, kHidden);
    f = [p](const Var& in) { return vit_block(in, p); };
  } else if (which == "nin_block") {
    auto p = make_nin_block(pb, "block", kTokens, kWidth, kHidden, kHidden, kHidden);
    f = [p](const Var& in) { return nin_block(in, p); };
  } else if (which == "localvit_block") {
    auto p = make_localvit_block(pb, "block", kWidth, kHeads, kHidden);
    f = [p, grid](const Var& in) { return localvit_block(in, grid, p); };
  } else {
    throw ContractError("unknown gradcheck block: " + which);
  }
  randomize(*store, rng);
  Case c;
  c.leaves = leaves_of(*store);
  c.leaves.push_back(x);
  c.loss = [f, x, r] { return sum(mul(f(x), r)); };
  c.keep_alive = store;
  return c;
}

Case model_case(Rng& rng, Variant variant) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.image_height = 8;
  cfg.image_width = 8;
  cfg.channels = 1;
  cfg.patch_size = 4;
  cfg.d_model = kWidth;
  cfg.n_blocks = 1;
  cfg.n_heads = kHeads;
  cfg.d_mlp = kHidden;
  cfg.d_token_mix = kHidden;
  cfg.d_channel_mix = kHidden;
  cfg.n_classes = 3;
  cfg.use_positional_embedding = default_positional_embedding(variant);
  auto model = std::make_shared<Model<double>>(cfg, rng());
  randomize(model->params(), rng);
  auto images = leaf({2, 8, 8, 1}, rng);
  std::vector<std::uint16_t> labels{static_cast<std::uint16_t>(rng() % 3), static_cast<std::uint16_t>(rng() % 3)};
  Case c;
  c.leaves = leaves_of(model->params());
  c.leaves.push_back(images);
  c.loss = [model, images, labels] { return cross_entropy(model->forward(images), labels); };
  c.keep_alive = model;
  return c;
}

Case op_case(Rng& rng, const std::string& op) {
  Case c;
  if (op == "matmul") {
    auto a = leaf({2, 3, 4}, rng), b = leaf({4, 5}, rng);
    const Var r(uniform({2, 3, 5}, rng));
    c.leaves = {a, b};
    c.loss = [a, b, r] { return sum(mul(matmul(a, b), r)); };
  } else if (op == "linear") {
    auto x = leaf({2, 3, 4}, rng), w = leaf({4, 5}, rng), b = leaf({5}, rng);
    const Var r(uniform({2, 3, 5}, rng));
    c.leaves = {x, w, b};
    c.loss = [x, w, b, r] { return sum(mul(linear(x, w, b), r)); };
  } else if (op == "add") {
    auto a = leaf({3, 4}, rng), b = leaf({3, 4}, rng);
    const Var r(uniform({3, 4}, rng));
    c.leaves = {a, b};
    c.loss = [a, b, r] { return sum(mul(add(a, b), r)); };
  } else if (op == "mul") {
    auto a = leaf({3, 4}, rng), b = leaf({3, 4}, rng);
    const Var r(uniform({3, 4}, rng));
    c.leaves = {a, b};
    c.loss = [a, b, r] { return sum(mul(mul(a, b), r)); };
  } else if (op == "scale") {
    auto a = leaf({3, 4}, rng);
    const Var r(uniform({3, 4}, rng));
    c.leaves = {a};
    c.loss = [a, r] { return sum(mul(scale(a, 0.7), r)); };
  } else if (op == "add_broadcast") {
    auto x = leaf({2, 3, 4}, rng), p = leaf({3, 4}, rng);
    const Var r(uniform({2, 3, 4}, rng));
    c.leaves = {x, p};
    c.loss = [x, p, r] { return sum(mul(add_broadcast(x, p), r)); };
  } else if (op == "gelu") {
    auto x = leaf({3, 5}, rng, 3.0);
    const Var r(uniform({3, 5}, rng));
    c.leaves = {x};
    c.loss = [x, r] { return sum(mul(gelu(x), r)); };
  } else if (op == "sigmoid") {
    auto x = leaf({3, 5}, rng, 3.0);
    const Var r(uniform({3, 5}, rng));
    c.leaves = {x};
    c.loss = [x, r] { return sum(mul(sigmoid(x), r)); };
  } else if (op == "softmax") {
    auto x = leaf({2, 3, 4}, rng, 2.0);
    const Var r1(uniform({2, 3, 4}, rng)), r2(uniform({2, 3, 4}, rng));
    c.leaves = {x};
    c.loss = [x, r1, r2] { return add(sum(mul(softmax(x, 1), r1)), sum(mul(softmax(x, -1), r2))); };
  } else if (op == "layer_norm") {
    auto x = leaf({3, 6}, rng, 2.0), g = leaf({6}, rng), b = leaf({6}, rng);
    const Var r(uniform({3, 6}, rng));
    c.leaves = {x, g, b};
    c.loss = [x, g, b, r] { return sum(mul(layer_norm(x, g, b, 1e-5), r)); };
  } else if (op == "transpose_last2") {
    auto x = leaf({2, 3, 4}, rng);
    const Var r(uniform({2, 4, 3}, rng));
    c.leaves = {x};
    c.loss = [x, r] { return sum(mul(transpose_last2(x), r)); };
  } else if (op == "permute") {
    auto x = leaf({2, 3, 4, 2}, rng);
    const Var r(uniform({2, 4, 2, 3}, rng));
    c.leaves = {x};
    c.loss = [x, r] { return sum(mul(permute(x, {0, 2, 3, 1}), r)); };
  } else if (op == "reshape") {
    auto x = leaf({2, 6}, rng);
    const Var r(uniform({3, 4}, rng));
    c.leaves = {x};
    c.loss = [x, r] { return sum(mul(reshape(x, {3, 4}), r)); };
  } else if (op == "mean_axis") {
    auto x = leaf({2, 3, 4}, rng);
    const Var r(uniform({2, 4}, rng));
    c.leaves = {x};
    c.loss = [x, r] { return sum(mul(mean_axis(x, 1), r)); };
  } else if (op == "sum") {
    auto x = leaf({3, 4}, rng);
    c.leaves = {x};
    c.loss = [x] {
      auto s = sum(x);
      return mul(s, s);
    };
  } else if (op == "depthwise_conv2d") {
    auto x = leaf({2, 3, 4, 2}, rng), k = leaf({3, 3, 2}, rng), b = leaf({2}, rng);
    const Var r(uniform({2, 3, 4, 2}, rng));
    c.leaves = {x, k, b};
    c.loss = [x, k, b, r] { return sum(mul(depthwise_conv2d(x, k, b), r)); };
  } else if (op == "extract_patches") {
    auto x = leaf({2, 4, 4, 2}, rng);
    const Var r(uniform({2, 4, 8}, rng));
    c.leaves = {x};
    c.loss = [x, r] { return sum(mul(extract_patches(x, 2), r)); };
  } else if (op == "cross_entropy") {
    auto z = leaf({2, 3}, rng, 2.0);
    std::vector<std::uint16_t> labels{0, 2};
    c.leaves = {z};
    c.loss = [z, labels] { return cross_entropy(z, labels); };
  } else {
    throw ContractError("unknown gradcheck op: " + op);
  }
  return c;
}

const std::vector<std::string>& op_names() {
  static const std::vector<std::string> names{
      "matmul",  "linear",          "add",     "mul",     "scale",     "add_broadcast",    "gelu",
      "sigmoid", "softmax",         "layer_norm", "transpose_last2", "permute", "reshape", "mean_axis",
      "sum",     "depthwise_conv2d", "extract_patches", "cross_entropy"};
  return names;
}

const std::vector<std::string>& block_names() {
  static const std::vector<std::string> names{"attention", "mixer_block", "conv_ffn", "nin_gating",
                                              "vit_block", "nin_block",   "localvit_block"};
  return names;
}

}  // namespace

std::vector<std::string> gradcheck_components() {
  std::vector<std::string> out;
  for (const auto& n : op_names()) out.push_back("op:" + n);
  for (const auto& n : block_names()) out.push_back("block:" + n);
  for (auto v : {Variant::vit, Variant::mlp_mixer, Variant::local_vit, Variant::ninformer}) {
    out.push_back("model:" + to_string(v));
  }
  return out;
}

GradCheckResult run_gradcheck(const std::string& component, const GradCheckOptions& opts) {
  const auto colon = component.find(':');
  if (colon == std::string::npos) throw ContractError("gradcheck component must be kind:name, got " + component);
  const std::string kind = component.substr(0, colon);
  const std::string name = component.substr(colon + 1);
  GradCheckResult result;
  result.component = component;
  result.seeds = opts.seeds;
  for (std::size_t s = 0; s < opts.seeds; ++s) {
    Rng rng(opts.base_seed + 7919 * s + std::hash<std::string>{}(component) % 1000003);
    Case c;
    if (kind == "op") {
      c = op_case(rng, name);
    } else if (kind == "block") {
      c = block_case(rng, name);
    } else if (kind == "model") {
      c = model_case(rng, parse_variant(name));
    } else {
      throw ContractError("unknown gradcheck component kind: " + kind);
    }
    std::size_t checked = 0;
    const double err = max_gradient_error(c.loss, c.leaves, opts.step, &checked);
    result.max_relative_error = std::max(result.max_relative_error, err);
    result.values_checked += checked;
  }
  result.passed = result.max_relative_error < opts.tolerance;
  return result;
}

std::vector<GradCheckResult> run_gradcheck_suite(const GradCheckOptions& opts) {
  std::vector<GradCheckResult> out;
  for (const auto& c : gradcheck_components()) out.push_back(run_gradcheck(c, opts));
  return out;
}

}  // namespace ninformer
