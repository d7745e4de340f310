#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ninformer/data.hpp"
#include "ninformer/model.hpp"

namespace ninformer {

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 128;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // Off by default; the base recipe is plain Adam at a constant rate.
  double weight_decay = 0.0;
  double grad_clip_norm = 0.0;
  std::size_t warmup_steps = 0;
  std::size_t eval_batch_size = 256;
};

void validate(const TrainConfig& cfg);

// Mean over the batch of -log softmax(logits)[label], via log-sum-exp.
template <typename T>
Variable<T> cross_entropy(const Variable<T>& logits, std::span<const std::uint16_t> labels);

template <typename T>
struct AdamState {
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamStore<T>& params) {
    AdamState s;
    for (const auto& [name, var] : params) {
      s.m.emplace_back(var.shape());
      s.v.emplace_back(var.shape());
    }
    return s;
  }
};

// Bias-corrected Adam update of every parameter, in store order.
template <typename T>
void adam_step(ParamStore<T>& params, std::span<const Tensor<T>> grads, AdamState<T>& state, const TrainConfig& cfg);

struct MetricsRecord {
  std::size_t epoch = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double test_loss = 0;
  double test_accuracy = 0;
  double wall_time_s = 0;
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;
  std::size_t samples = 0;
};

// Argmax with ties going to the lowest class index.
std::size_t argmax(std::span<const float> row);
std::size_t argmax(std::span<const double> row);

// Loss and accuracy over the whole split, without recording gradients.
template <typename T>
EvalResult evaluate(const Model<T>& model, const LabeledDataset& ds, std::size_t batch_size = 256);

class TrainingAborted : public NumericError {
 public:
  TrainingAborted(std::size_t epoch, std::size_t batch, double loss);
  std::size_t epoch;
  std::size_t batch;
};

struct TrainResult {
  std::vector<MetricsRecord> epochs;
  std::vector<double> step_losses;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

// Epoch loop: shuffled minibatches with forward, backward and an Adam step,
// then a full evaluation on `test`. Throws TrainingAborted on a non-finite
// loss.
template <typename T>
TrainResult train(Model<T>& model, const LabeledDataset& train_set, const LabeledDataset& test_set,
                  const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Means of consecutive non-overlapping windows of `window` steps. A trailing
// partial window is dropped.
std::vector<double> window_means(std::span<const double> values, std::size_t window);

inline constexpr const char* kMetricsCsvHeader = "epoch,train_loss,train_acc,test_loss,test_acc,wall_time_s";

std::string metrics_csv(std::span<const MetricsRecord> records);
std::string metrics_jsonl(std::span<const MetricsRecord> records);
std::vector<MetricsRecord> parse_metrics_jsonl(const std::string& text);

}  // namespace ninformer
