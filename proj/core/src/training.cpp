#include "ninformer/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <sstream>

#include "ninformer/ops.hpp"

namespace ninformer {

void validate(const TrainConfig& cfg) {
  auto fail = [](const std::string& what) { throw ConfigError("invalid training config: " + what); };
  if (!(cfg.learning_rate >= 0.0)) fail("learning_rate must be non-negative");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(cfg.adam_eps > 0.0)) fail("adam_eps must be positive");
  if (cfg.batch_size == 0 || cfg.eval_batch_size == 0) fail("batch sizes must be at least 1");
  if (cfg.weight_decay < 0.0 || cfg.grad_clip_norm < 0.0) fail("weight_decay and grad_clip_norm must be non-negative");
}

template <typename T>
Variable<T> cross_entropy(const Variable<T>& logits, std::span<const std::uint16_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw DimensionError("cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  for (auto l : labels) {
    if (l >= c) throw ContractError("cross_entropy: label " + std::to_string(l) + " outside [0, " + std::to_string(c) + ")");
  }
  const T* z = logits.value().raw();
  Tensor<T> probs(Shape{b, c});
  T* p = probs.raw();
  T total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* row = z + i * c;
    T mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) {
      p[i * c + j] = std::exp(row[j] - mx);
      s += p[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) p[i * c + j] /= s;
    total += mx + std::log(s) - row[labels[i]];
  }
  Variable<T> loss(Tensor<T>::scalar(total / T(b)));
  if (should_record<T>(logits)) {
    loss.set_requires_grad(true);
    std::vector<std::uint16_t> lbl(labels.begin(), labels.end());
    GradTape<T>::active()->record(loss, [logits, probs = std::move(probs), lbl = std::move(lbl), b, c](const Tensor<T>& g) {
      const T f = g[0] / T(b) * (backward_fault() == "cross_entropy" ? T(1.5) : T(1));
      T* gz = logits.node().grad_buffer().raw();
      const T* p = probs.raw();
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t j = 0; j < c; ++j) gz[i * c + j] += f * (p[i * c + j] - (j == lbl[i] ? T(1) : T(0)));
      }
    });
  }
  return loss;
}

template <typename T>
void adam_step(ParamStore<T>& params, std::span<const Tensor<T>> grads, AdamState<T>& state, const TrainConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: gradient/state count does not match the parameter store");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].second.shape() || state.m[i].shape() != params[i].second.shape()) {
      throw ContractError("adam_step: shape mismatch for " + params[i].first + ": parameter " +
                          to_string(params[i].second.shape()) + ", gradient " + to_string(grads[i].shape()));
    }
  }
  state.step += 1;
  double clip = 1.0;
  if (cfg.grad_clip_norm > 0.0) {
    double sq = 0;
    for (const auto& g : grads) {
      for (T v : g.data()) sq += static_cast<double>(v) * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > cfg.grad_clip_norm) clip = cfg.grad_clip_norm / norm;
  }
  double lr = cfg.learning_rate;
  if (cfg.warmup_steps > 0 && state.step < cfg.warmup_steps) {
    lr *= static_cast<double>(state.step) / static_cast<double>(cfg.warmup_steps);
  }
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, static_cast<double>(state.step)));
  const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, static_cast<double>(state.step)));
  const T eta = static_cast<T>(lr), eps = static_cast<T>(cfg.adam_eps);
  const T wd = static_cast<T>(cfg.weight_decay), scale = static_cast<T>(clip);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Variable<T> var = params[i].second;
    auto w = var.mutable_value().data();
    auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T grad = g[j] * scale + wd * w[j];
      m[j] = b1 * m[j] + (T(1) - b1) * grad;
      v[j] = b2 * v[j] + (T(1) - b2) * grad * grad;
      const T mhat = m[j] / c1;
      const T vhat = v[j] / c2;
      w[j] -= eta * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

namespace {

template <typename T>
std::size_t argmax_impl(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

// Sum of per-sample cross-entropy and number of correct argmax predictions.
template <typename T>
std::pair<double, std::size_t> score_batch(const Tensor<T>& logits, std::span<const std::uint16_t> labels) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  double loss = 0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < b; ++i) {
    std::span<const T> row(logits.raw() + i * c, c);
    double mx = row[0];
    for (T v : row) mx = std::max(mx, static_cast<double>(v));
    double s = 0;
    for (T v : row) s += std::exp(static_cast<double>(v) - mx);
    loss += mx + std::log(s) - static_cast<double>(row[labels[i]]);
    if (argmax_impl(row) == labels[i]) ++correct;
  }
  return {loss, correct};
}

template <typename T>
Tensor<T> images_as(const Tensor<float>& images) {
  if constexpr (std::is_same_v<T, float>) {
    return images;
  } else {
    return images.cast<T>();
  }
}

}  // namespace

std::size_t argmax(std::span<const float> row) { return argmax_impl(row); }
std::size_t argmax(std::span<const double> row) { return argmax_impl(row); }

template <typename T>
EvalResult evaluate(const Model<T>& model, const LabeledDataset& ds, std::size_t batch_size) {
  BatchIterator it(ds.size(), batch_size, 0, false);
  double loss = 0;
  std::size_t correct = 0;
  while (auto idx = it.next()) {
    auto batch = gather(ds, *idx);
    auto logits = model.forward(images_as<T>(batch.images));
    auto [l, c] = score_batch(logits.value(), batch.labels);
    loss += l;
    correct += c;
  }
  EvalResult r;
  r.samples = ds.size();
  r.loss = loss / static_cast<double>(ds.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(ds.size());
  return r;
}

TrainingAborted::TrainingAborted(std::size_t epoch_, std::size_t batch_, double loss)
    : NumericError("non-finite loss " + std::to_string(loss) + " at epoch " + std::to_string(epoch_) + ", batch " +
                   std::to_string(batch_)),
      epoch(epoch_),
      batch(batch_) {}

template <typename T>
TrainResult train(Model<T>& model, const LabeledDataset& train_set, const LabeledDataset& test_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch) {
  validate(cfg);
  const auto& mc = model.config();
  const Shape& s = train_set.images.shape();
  if (s.size() != 4 || s[1] != mc.image_height || s[2] != mc.image_width || s[3] != mc.channels) {
    throw DimensionError("training images " + to_string(s) + " do not match the model input");
  }
  if (train_set.n_classes > mc.n_classes) {
    throw ConfigError("dataset has " + std::to_string(train_set.n_classes) + " classes, model head has " +
                      std::to_string(mc.n_classes));
  }
  auto& params = model.params();
  auto state = AdamState<T>::zeros_like(params);
  BatchIterator batches(train_set.size(), cfg.batch_size, cfg.seed, true);
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    batches.start_epoch(epoch);
    double loss_sum = 0;
    std::size_t correct = 0, seen = 0, batch_index = 0;
    while (auto idx = batches.next()) {
      ++batch_index;
      auto batch = gather(train_set, *idx);
      std::vector<Tensor<T>> grads;
      double loss_value;
      {
        GradTape<T> tape;
        auto logits = model.forward(images_as<T>(batch.images));
        auto loss = cross_entropy(logits, batch.labels);
        loss_value = static_cast<double>(loss.value().item());
        if (!std::isfinite(loss_value)) throw TrainingAborted(epoch, batch_index, loss_value);
        grads = tape.backward(loss, params);
        correct += score_batch(logits.value(), batch.labels).second;
      }
      params.zero_grad();
      adam_step<T>(params, grads, state, cfg);
      result.step_losses.push_back(loss_value);
      loss_sum += loss_value * static_cast<double>(idx->size());
      seen += idx->size();
    }
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(seen);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    const auto eval = evaluate(model, test_set, cfg.eval_batch_size);
    rec.test_loss = eval.loss;
    rec.test_accuracy = eval.accuracy;
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::vector<double> window_means(std::span<const double> values, std::size_t window) {
  if (window == 0) throw ConfigError("window must be at least 1");
  std::vector<double> means;
  for (std::size_t start = 0; start + window <= values.size(); start += window) {
    double total = 0;
    for (std::size_t i = start; i < start + window; ++i) total += values[i];
    means.push_back(total / static_cast<double>(window));
  }
  return means;
}

std::string metrics_csv(std::span<const MetricsRecord> records) {
  std::string out = std::string(kMetricsCsvHeader) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.epoch) + "," + fmt(r.train_loss) + "," + fmt(r.train_accuracy) + "," + fmt(r.test_loss) +
           "," + fmt(r.test_accuracy) + "," + fmt(r.wall_time_s) + "\n";
  }
  return out;
}

std::string metrics_jsonl(std::span<const MetricsRecord> records) {
  std::string out;
  for (const auto& r : records) {
    nlohmann::ordered_json j;
    j["epoch"] = r.epoch;
    j["train_loss"] = r.train_loss;
    j["train_acc"] = r.train_accuracy;
    j["test_loss"] = r.test_loss;
    j["test_acc"] = r.test_accuracy;
    j["wall_time_s"] = r.wall_time_s;
    out += j.dump() + "\n";
  }
  return out;
}

std::vector<MetricsRecord> parse_metrics_jsonl(const std::string& text) {
  std::vector<MetricsRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      auto j = nlohmann::json::parse(line);
      MetricsRecord r;
      r.epoch = j.at("epoch").get<std::size_t>();
      r.train_loss = j.at("train_loss").get<double>();
      r.train_accuracy = j.at("train_acc").get<double>();
      r.test_loss = j.at("test_loss").get<double>();
      r.test_accuracy = j.at("test_acc").get<double>();
      r.wall_time_s = j.at("wall_time_s").get<double>();
      out.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("metrics line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

template Variable<float> cross_entropy(const Variable<float>&, std::span<const std::uint16_t>);
template Variable<double> cross_entropy(const Variable<double>&, std::span<const std::uint16_t>);
template void adam_step(ParamStore<float>&, std::span<const Tensor<float>>, AdamState<float>&, const TrainConfig&);
template void adam_step(ParamStore<double>&, std::span<const Tensor<double>>, AdamState<double>&, const TrainConfig&);
template EvalResult evaluate(const Model<float>&, const LabeledDataset&, std::size_t);
template EvalResult evaluate(const Model<double>&, const LabeledDataset&, std::size_t);
template TrainResult train(Model<float>&, const LabeledDataset&, const LabeledDataset&, const TrainConfig&,
                           const EpochCallback&);
template TrainResult train(Model<double>&, const LabeledDataset&, const LabeledDataset&, const TrainConfig&,
                           const EpochCallback&);

}  // namespace ninformer
