#include <gtest/gtest.h>

#include <random>

#include "ninformer/checkpoint.hpp"
#include "ninformer/model.hpp"
#include "ninformer/ops.hpp"

using namespace ninformer;

namespace {

ModelConfig small(Variant v) {
  ModelConfig c;
  c.variant = v;
  c.image_height = c.image_width = 8;
  c.channels = 1;
  c.patch_size = 4;
  c.d_model = 8;
  c.n_blocks = 2;
  c.n_heads = 2;
  c.d_mlp = c.d_token_mix = c.d_channel_mix = 16;
  c.n_classes = 3;
  c.use_positional_embedding = default_positional_embedding(v);
  return c;
}

ModelConfig paper(Variant v, bool cifar) {
  ModelConfig c;
  c.variant = v;
  c.image_height = c.image_width = cifar ? 32 : 28;
  c.channels = cifar ? 3 : 1;
  c.patch_size = 4;
  c.d_model = 256;
  c.n_blocks = 4;
  c.n_heads = 4;
  c.d_mlp = c.d_token_mix = c.d_channel_mix = 512;
  c.n_classes = 10;
  c.use_positional_embedding = default_positional_embedding(v);
  return c;
}

Tensor<float> images(std::size_t b, const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist;
  Tensor<float> t({b, c.image_height, c.image_width, c.channels});
  for (auto& x : t.data()) x = dist(rng);
  return t;
}

const Variant kAll[] = {Variant::vit, Variant::mlp_mixer, Variant::local_vit, Variant::ninformer};

}  // namespace

TEST(ModelConfig, TokenCountLaw) {
  for (std::size_t h : {8u, 16u, 28u, 32u}) {
    for (std::size_t ps : {2u, 4u}) {
      ModelConfig c = small(Variant::vit);
      c.image_height = c.image_width = h;
      c.patch_size = ps;
      EXPECT_EQ(c.n_tokens(), (h / ps) * (h / ps));
    }
  }
  EXPECT_EQ(paper(Variant::vit, false).n_tokens(), 49u);
  EXPECT_EQ(paper(Variant::vit, false).patch_dim(), 16u);
  EXPECT_EQ(paper(Variant::vit, true).n_tokens(), 64u);
  EXPECT_EQ(paper(Variant::vit, true).patch_dim(), 48u);
}

TEST(ModelConfig, ValidationNamesTheProblem) {
  auto c = small(Variant::vit);
  c.image_height = c.image_width = 30;
  EXPECT_THROW(validate(c), ConfigError);
  c = small(Variant::vit);
  c.n_heads = 3;
  try {
    validate(c);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("n_heads"), std::string::npos);
  }
  c = small(Variant::ninformer);
  c.n_heads = 3;  // heads are irrelevant without attention
  EXPECT_NO_THROW(validate(c));
}

TEST(ModelConfig, JsonRoundTrip) {
  for (auto v : kAll) {
    auto c = paper(v, true);
    c.sigmoid_gate = v == Variant::ninformer;
    EXPECT_EQ(model_config_from_json(to_json(c)), c);
  }
  EXPECT_THROW(model_config_from_json("{not json"), ConfigError);
  EXPECT_THROW(model_config_from_json(R"({"variant":"resnet"})"), ConfigError);
}

TEST(ModelConfig, VariantNames) {
  EXPECT_EQ(parse_variant("mixer"), Variant::mlp_mixer);
  EXPECT_EQ(parse_variant("localvit"), Variant::local_vit);
  EXPECT_EQ(parse_variant(to_string(Variant::ninformer)), Variant::ninformer);
  EXPECT_THROW(parse_variant("gmlp"), ConfigError);
}

TEST(Model, ParameterCountLaw) {
  for (auto v : kAll) {
    for (bool cifar : {false, true}) {
      auto c = paper(v, cifar);
      Model<float> m(c, 1);
      EXPECT_EQ(m.params().numel(), expected_parameter_count(c)) << to_string(v);
    }
    auto c = small(v);
    c.use_positional_embedding = !c.use_positional_embedding;
    EXPECT_EQ(Model<float>(c, 1).params().numel(), expected_parameter_count(c));
  }
}

TEST(Model, LogitShapeForCifarBatch) {
  for (auto v : kAll) {
    auto c = paper(v, true);
    c.n_blocks = 1;
    Model<float> m(c, 2);
    EXPECT_EQ(m.forward(images(128, c, 3)).shape(), (Shape{128, 10}));
  }
}

TEST(Model, SameSeedSameParameters) {
  for (auto v : kAll) {
    Model<float> a(small(v), 7), b(small(v), 7), other(small(v), 8);
    EXPECT_EQ(fingerprint(a.params()), fingerprint(b.params()));
    EXPECT_NE(fingerprint(a.params()), fingerprint(other.params()));
  }
}

TEST(Model, InitializationConvention) {
  Model<double> m(paper(Variant::ninformer, true), 3);
  for (const auto& [name, var] : m.params()) {
    const auto values = var.value().data();
    if (name.ends_with(".bias") || name.ends_with(".beta")) {
      for (double x : values) EXPECT_EQ(x, 0.0) << name;
    } else if (name.ends_with(".gamma")) {
      for (double x : values) EXPECT_EQ(x, 1.0) << name;
    } else {
      double sq = 0;
      for (double x : values) {
        EXPECT_LE(std::abs(x), 0.04) << name;
        sq += x * x;
      }
      if (values.size() > 1000) {
        EXPECT_NEAR(std::sqrt(sq / values.size()), 0.0176, 0.002) << name;
      }
    }
  }
}

TEST(Model, WrongImageShapeIsDimensionError) {
  Model<float> m(small(Variant::vit), 1);
  EXPECT_THROW(m.forward(Tensor<float>({1, 8, 8, 3})), DimensionError);
}

TEST(Model, ZeroHeadGivesBiasLogits) {
  for (auto v : kAll) {
    Model<float> m(small(v), 4);
    for (const auto& [name, var] : m.params()) {
      Variable<float> p = var;
      if (name == "head.weight") p.mutable_value().fill(0.0f);
      if (name == "head.bias") p.mutable_value() = Tensor<float>({3}, {0.5f, -1.0f, 2.0f});
    }
    auto logits = m.forward(images(4, small(v), 5)).value();
    for (std::size_t i = 0; i < 4; ++i) {
      EXPECT_EQ(logits.at({i, 0}), 0.5f);
      EXPECT_EQ(logits.at({i, 1}), -1.0f);
      EXPECT_EQ(logits.at({i, 2}), 2.0f);
    }
  }
}

TEST(Model, PermutingHeadColumnsPermutesLogits) {
  Model<double> m(small(Variant::ninformer), 6);
  auto x = images(3, small(Variant::ninformer), 7).cast<double>();
  auto before = m.forward(x).value();
  Variable<double> w = m.params().get("head.weight");
  Variable<double> b = m.params().get("head.bias");
  const std::size_t perm[3] = {2, 0, 1};
  Tensor<double> w2 = w.value(), b2 = b.value();
  for (std::size_t k = 0; k < 8; ++k) {
    for (std::size_t c = 0; c < 3; ++c) w2.at({k, c}) = w.value().at({k, perm[c]});
  }
  for (std::size_t c = 0; c < 3; ++c) b2[c] = b.value()[perm[c]];
  w.mutable_value() = w2;
  b.mutable_value() = b2;
  auto after = m.forward(x).value();
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(after.at({i, c}), before.at({i, perm[c]}));
  }
}

TEST(Model, PatchEmbedUsesRowMajorGrid) {
  ParamStore<double> store;
  ParamBuilder<double> pb(store, 0);
  auto embed = make_linear(pb, "embed", 4, 4);
  Tensor<double> eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at({i, i}) = 1;
  embed.weight.mutable_value() = eye;
  Tensor<double> img({1, 4, 4, 1});
  for (std::size_t i = 0; i < 16; ++i) img[i] = static_cast<double>(i);
  auto tokens = patch_embed(Variable<double>(img), 2, embed).value();
  ASSERT_EQ(tokens.shape(), (Shape{1, 4, 4}));
  EXPECT_EQ(tokens.at({0, 1, 0}), 2.0);  // second patch starts at column 2
  EXPECT_EQ(tokens.at({0, 2, 0}), 8.0);  // third patch starts at row 2
}
