#include "ninformer_cli/run_config.hpp"

#include <algorithm>
#include <json.hpp>
#include <sstream>

namespace ninformer::cli {

using nlohmann::ordered_json;

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision parse_precision(const std::string& name) {
  if (name == "f32" || name == "float" || name == "32") return Precision::f32;
  if (name == "f64" || name == "double" || name == "64") return Precision::f64;
  throw ConfigError("unknown precision '" + name + "', expected f32 or f64");
}

namespace {

const std::vector<std::string> kVariants{"vit", "mixer", "localvit", "ninformer"};
const std::vector<std::string> kDatasets{"mnist", "cifar10", "cifar100"};
const std::vector<std::string> kScales{"paper", "toy"};

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) parts.push_back(part);
  return parts;
}

}  // namespace

std::vector<std::string> preset_names() {
  std::vector<std::string> names;
  for (const auto& v : kVariants) {
    for (const auto& d : kDatasets) {
      for (const auto& s : kScales) names.push_back(v + "-" + d + "-" + s);
    }
  }
  return names;
}

RunConfig preset(const std::string& name) {
  const auto parts = split(name, '-');
  auto known = [](const std::vector<std::string>& set, const std::string& x) {
    return std::find(set.begin(), set.end(), x) != set.end();
  };
  if (parts.size() != 3 || !known(kVariants, parts[0]) || !known(kDatasets, parts[1]) || !known(kScales, parts[2])) {
    throw ConfigError("unknown preset '" + name + "'; expected <vit|mixer|localvit|ninformer>-<mnist|cifar10|cifar100>-<paper|toy>");
  }
  RunConfig cfg;
  cfg.preset = name;
  cfg.dataset = parse_dataset(parts[1]);

  ModelConfig& m = cfg.model;
  m.variant = parse_variant(parts[0]);
  if (cfg.dataset == DatasetName::mnist) {
    m.image_height = m.image_width = 28;
    m.channels = 1;
  } else {
    m.image_height = m.image_width = 32;
    m.channels = 3;
  }
  m.n_classes = class_count(cfg.dataset);
  m.patch_size = 4;
  m.use_positional_embedding = default_positional_embedding(m.variant);

  TrainConfig& t = cfg.train;
  t.learning_rate = 1e-3;
  t.seed = 0;
  if (parts[2] == "paper") {
    m.d_model = 256;
    m.n_blocks = 4;
    m.n_heads = 4;
    m.d_mlp = m.d_token_mix = m.d_channel_mix = 512;
    t.epochs = 100;
    t.batch_size = 128;
  } else {
    m.d_model = 64;
    m.n_blocks = 2;
    m.n_heads = 2;
    m.d_mlp = m.d_token_mix = m.d_channel_mix = 128;
    t.epochs = 3;
    t.batch_size = kToyBatchSize;
    cfg.train_subset = 10000;
  }
  return cfg;
}

namespace {

ordered_json train_json(const TrainConfig& t) {
  ordered_json j;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["learning_rate"] = t.learning_rate;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_eps"] = t.adam_eps;
  j["seed"] = t.seed;
  j["weight_decay"] = t.weight_decay;
  j["grad_clip_norm"] = t.grad_clip_norm;
  j["warmup_steps"] = t.warmup_steps;
  j["eval_batch_size"] = t.eval_batch_size;
  return j;
}

TrainConfig train_from_json(const ordered_json& j) {
  TrainConfig t;
  t.epochs = j.value("epochs", t.epochs);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  t.seed = j.value("seed", t.seed);
  t.weight_decay = j.value("weight_decay", t.weight_decay);
  t.grad_clip_norm = j.value("grad_clip_norm", t.grad_clip_norm);
  t.warmup_steps = j.value("warmup_steps", t.warmup_steps);
  t.eval_batch_size = j.value("eval_batch_size", t.eval_batch_size);
  return t;
}

ordered_json to_ordered(const RunConfig& cfg) {
  ordered_json j;
  j["preset"] = cfg.preset;
  j["dataset"] = to_string(cfg.dataset);
  j["train_subset"] = cfg.train_subset;
  j["precision"] = to_string(cfg.precision);
  j["model"] = ordered_json::parse(ninformer::to_json(cfg.model));
  j["train"] = train_json(cfg.train);
  if (cfg.normalization) {
    j["normalization"] = {{"mean", cfg.normalization->mean}, {"std", cfg.normalization->stddev}};
  }
  return j;
}

RunConfig from_ordered(const ordered_json& j) {
  RunConfig cfg;
  try {
    cfg.preset = j.value("preset", std::string{});
    cfg.dataset = parse_dataset(j.at("dataset").get<std::string>());
    cfg.train_subset = j.value("train_subset", std::size_t{0});
    cfg.precision = parse_precision(j.value("precision", std::string{"f32"}));
    cfg.model = model_config_from_json(j.at("model").dump());
    cfg.train = train_from_json(j.value("train", ordered_json::object()));
    if (j.contains("normalization")) {
      ChannelStats stats;
      stats.mean = j["normalization"].at("mean").get<std::vector<float>>();
      stats.stddev = j["normalization"].at("std").get<std::vector<float>>();
      cfg.normalization = std::move(stats);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config field error: ") + e.what());
  }
  validate(cfg.model);
  validate(cfg.train);
  if (cfg.model.n_classes != class_count(cfg.dataset)) {
    throw ConfigError("model has " + std::to_string(cfg.model.n_classes) + " classes but " + to_string(cfg.dataset) +
                      " has " + std::to_string(class_count(cfg.dataset)));
  }
  return cfg;
}

}  // namespace

std::string to_json(const RunConfig& cfg) { return to_ordered(cfg).dump(2) + "\n"; }

RunConfig run_config_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  return from_ordered(j);
}

RunConfig apply_overrides(const RunConfig& cfg, const std::vector<std::string>& overrides) {
  if (overrides.empty()) return cfg;
  ordered_json j = to_ordered(cfg);
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq);
    const std::string raw = item.substr(eq + 1);

    std::vector<std::string> path = split(key, '.');
    if (path.size() == 1 && !j.contains(key)) {
      std::vector<std::string> owners;
      for (const char* section : {"model", "train"}) {
        if (j[section].contains(key)) owners.emplace_back(section);
      }
      if (owners.size() != 1) throw ConfigError("unknown config key '" + key + "'");
      path.insert(path.begin(), owners.front());
    }
    ordered_json* node = &j;
    for (std::size_t i = 0; i + 1 < path.size(); ++i) {
      if (!node->contains(path[i])) throw ConfigError("unknown config key '" + key + "'");
      node = &(*node)[path[i]];
    }
    if (!node->is_object() || !node->contains(path.back())) throw ConfigError("unknown config key '" + key + "'");

    ordered_json value;
    try {
      value = ordered_json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      value = raw;
    }
    (*node)[path.back()] = value;
  }
  return from_ordered(j);
}

}  // namespace ninformer::cli
