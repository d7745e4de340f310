#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ninformer/errors.hpp"
#include "ninformer/tensor.hpp"

namespace ninformer {

enum class Split { train, test };
enum class DatasetName { mnist, cifar10, cifar100 };

std::string to_string(Split s);
std::string to_string(DatasetName d);
DatasetName parse_dataset(const std::string& name);

// Canonical split sizes of the public distributions.
std::size_t canonical_count(DatasetName name, Split split);
std::size_t class_count(DatasetName name);

struct LabeledDataset {
  DatasetName name = DatasetName::mnist;
  Split split = Split::train;
  Tensor<float> images;               // [N, h, w, c]
  std::vector<std::uint16_t> labels;  // each < n_classes
  std::size_t n_classes = 0;

  std::size_t size() const { return labels.size(); }
};

struct LoadOptions {
  // Reject files whose sample count differs from the canonical split size.
  bool require_canonical_count = true;
};

// Big-endian IDX files: {train,t10k}-images-idx3-ubyte (magic 2051, 28x28)
// and {train,t10k}-labels-idx1-ubyte (magic 2049). Pixels scale to [0, 1].
LabeledDataset load_mnist(const std::filesystem::path& dir, Split split, LoadOptions opts = {});

// Binary-version CIFAR archives. CIFAR-10 reads data_batch_{1..5}.bin or
// test_batch.bin (1 label byte + 3072 channel-planar pixels per record);
// CIFAR-100 reads train.bin or test.bin (coarse byte, fine byte, 3072 pixels)
// and keeps the fine label. Images come out interleaved [32, 32, 3].
LabeledDataset load_cifar(const std::filesystem::path& dir, int which, Split split, LoadOptions opts = {});

// In-memory parsers behind the loaders; `source` names the input in errors.
LabeledDataset parse_mnist(const std::string& image_bytes, const std::string& label_bytes, Split split,
                           const std::string& source = "mnist");
LabeledDataset parse_cifar(const std::string& bytes, int which, Split split, const std::string& source = "cifar");

LabeledDataset load_dataset(DatasetName name, const std::filesystem::path& dir, Split split, LoadOptions opts = {});

struct ChannelStats {
  std::vector<float> mean;
  std::vector<float> stddev;
};

// Per-channel mean and population standard deviation over every pixel.
ChannelStats channel_stats(const LabeledDataset& ds);

// (x - mean) / std per channel. Throws ConfigError if any std is not positive.
LabeledDataset normalize(const LabeledDataset& ds, const ChannelStats& stats);
LabeledDataset denormalize(const LabeledDataset& ds, const ChannelStats& stats);

// First `n` samples (all of them if n >= size).
LabeledDataset take(const LabeledDataset& ds, std::size_t n);

// Copies the indexed samples into a contiguous batch.
struct Batch {
  Tensor<float> images;
  std::vector<std::uint16_t> labels;
};
Batch gather(const LabeledDataset& ds, std::span<const std::size_t> indices);

// Minibatch index stream. Each epoch visits every index once; the final short
// batch is kept. With shuffling the order is a permutation seeded by
// (seed, epoch).
class BatchIterator {
 public:
  BatchIterator(std::size_t n_samples, std::size_t batch_size, std::uint64_t seed, bool shuffle);

  void start_epoch(std::size_t epoch);
  std::optional<std::span<const std::size_t>> next();

  std::size_t batches_per_epoch() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  std::size_t batch_size() const { return batch_size_; }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::uint64_t seed_;
  bool shuffle_;
  std::size_t cursor_ = 0;
};

}  // namespace ninformer
