#include "ninformer/data.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ninformer/errors.hpp"

namespace ninformer {

namespace {

constexpr std::uint32_t kIdxImageMagic = 2051;
constexpr std::uint32_t kIdxLabelMagic = 2049;
constexpr std::size_t kMnistSide = 28;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarPixels = kCifarSide * kCifarSide * 3;

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint32_t read_be32(const std::string& bytes, std::size_t offset, const std::string& source) {
  if (bytes.size() < offset + 4) {
    throw FormatError(source + ": truncated header at byte offset " + std::to_string(offset));
  }
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  return v;
}

void check_count(const LabeledDataset& ds, const LoadOptions& opts, const std::string& source) {
  const std::size_t expected = canonical_count(ds.name, ds.split);
  if (opts.require_canonical_count && ds.size() != expected) {
    throw FormatError(source + ": " + std::to_string(ds.size()) + " samples, expected " + std::to_string(expected) +
                      " for the " + to_string(ds.name) + " " + to_string(ds.split) + " split");
  }
}

std::filesystem::path resolve_dir(const std::filesystem::path& dir, const char* nested, const std::string& probe) {
  if (std::filesystem::exists(dir / probe)) return dir;
  if (std::filesystem::exists(dir / nested / probe)) return dir / nested;
  return dir;
}

}  // namespace

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

std::string to_string(DatasetName d) {
  switch (d) {
    case DatasetName::mnist:
      return "mnist";
    case DatasetName::cifar10:
      return "cifar10";
    case DatasetName::cifar100:
      return "cifar100";
  }
  return "unknown";
}

DatasetName parse_dataset(const std::string& name) {
  if (name == "mnist") return DatasetName::mnist;
  if (name == "cifar10") return DatasetName::cifar10;
  if (name == "cifar100") return DatasetName::cifar100;
  throw ConfigError("unknown dataset: " + name);
}

std::size_t canonical_count(DatasetName name, Split split) {
  if (split == Split::test) return 10000;
  return name == DatasetName::mnist ? 60000 : 50000;
}

std::size_t class_count(DatasetName name) { return name == DatasetName::cifar100 ? 100 : 10; }

LabeledDataset parse_mnist(const std::string& image_bytes, const std::string& label_bytes, Split split,
                           const std::string& source) {
  const std::string img_src = source + " images";
  const std::string lbl_src = source + " labels";
  if (const auto magic = read_be32(image_bytes, 0, img_src); magic != kIdxImageMagic) {
    throw FormatError(img_src + ": bad magic " + std::to_string(magic) + " at byte offset 0, expected 2051");
  }
  if (const auto magic = read_be32(label_bytes, 0, lbl_src); magic != kIdxLabelMagic) {
    throw FormatError(lbl_src + ": bad magic " + std::to_string(magic) + " at byte offset 0, expected 2049");
  }
  const std::size_t n_images = read_be32(image_bytes, 4, img_src);
  const std::size_t rows = read_be32(image_bytes, 8, img_src);
  const std::size_t cols = read_be32(image_bytes, 12, img_src);
  const std::size_t n_labels = read_be32(label_bytes, 4, lbl_src);
  if (rows != kMnistSide || cols != kMnistSide) {
    throw FormatError(img_src + ": declared image size " + std::to_string(rows) + "x" + std::to_string(cols) +
                      " at byte offset 8, expected 28x28");
  }
  if (n_images != n_labels) {
    throw FormatError(source + ": image file declares " + std::to_string(n_images) + " items at byte offset 4 but label file declares " +
                      std::to_string(n_labels));
  }
  if (n_images == 0) throw FormatError(img_src + ": zero images declared at byte offset 4");
  const std::size_t pixels = rows * cols;
  const std::size_t image_end = 16 + n_images * pixels;
  if (image_bytes.size() < image_end) {
    throw FormatError(img_src + ": truncated at byte offset " + std::to_string(image_bytes.size()) + ", expected " +
                      std::to_string(image_end) + " bytes");
  }
  if (image_bytes.size() > image_end) {
    throw FormatError(img_src + ": unexpected trailing data at byte offset " + std::to_string(image_end));
  }
  if (label_bytes.size() != 8 + n_labels) {
    throw FormatError(lbl_src + ": length mismatch at byte offset " + std::to_string(std::min(label_bytes.size(), 8 + n_labels)) +
                      ", expected " + std::to_string(8 + n_labels) + " bytes");
  }

  LabeledDataset ds;
  ds.name = DatasetName::mnist;
  ds.split = split;
  ds.n_classes = 10;
  ds.images = Tensor<float>(Shape{n_images, rows, cols, 1});
  auto out = ds.images.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<unsigned char>(image_bytes[16 + i]) / 255.0f;
  ds.labels.resize(n_labels);
  for (std::size_t i = 0; i < n_labels; ++i) {
    const auto label = static_cast<unsigned char>(label_bytes[8 + i]);
    if (label >= 10) throw FormatError(lbl_src + ": label " + std::to_string(label) + " at byte offset " + std::to_string(8 + i));
    ds.labels[i] = label;
  }
  return ds;
}

LabeledDataset load_mnist(const std::filesystem::path& dir, Split split, LoadOptions opts) {
  const std::string prefix = split == Split::train ? "train" : "t10k";
  const auto image_path = dir / (prefix + "-images-idx3-ubyte");
  const auto label_path = dir / (prefix + "-labels-idx1-ubyte");
  auto ds = parse_mnist(read_file(image_path), read_file(label_path), split, image_path.parent_path().string());
  check_count(ds, opts, dir.string());
  return ds;
}

LabeledDataset parse_cifar(const std::string& bytes, int which, Split split, const std::string& source) {
  if (which != 10 && which != 100) throw ConfigError("CIFAR variant must be 10 or 100");
  const std::size_t label_bytes = which == 10 ? 1 : 2;
  const std::size_t record = label_bytes + kCifarPixels;
  if (bytes.empty() || bytes.size() % record != 0) {
    throw FormatError(source + ": length " + std::to_string(bytes.size()) + " is not a multiple of the " +
                      std::to_string(record) + "-byte record size; misaligned at byte offset " +
                      std::to_string(bytes.size() - bytes.size() % record));
  }
  const std::size_t n = bytes.size() / record;
  const std::size_t classes = which == 10 ? 10 : 100;
  LabeledDataset ds;
  ds.name = which == 10 ? DatasetName::cifar10 : DatasetName::cifar100;
  ds.split = split;
  ds.n_classes = classes;
  ds.images = Tensor<float>(Shape{n, kCifarSide, kCifarSide, 3});
  ds.labels.resize(n);
  float* out = ds.images.raw();
  constexpr std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t base = r * record;
    const auto label = static_cast<unsigned char>(bytes[base + label_bytes - 1]);
    if (label >= classes) {
      throw FormatError(source + ": label " + std::to_string(label) + " at byte offset " +
                        std::to_string(base + label_bytes - 1));
    }
    ds.labels[r] = label;
    const char* px = bytes.data() + base + label_bytes;
    float* img = out + r * kCifarPixels;
    for (std::size_t p = 0; p < plane; ++p) {
      for (std::size_t ch = 0; ch < 3; ++ch) img[p * 3 + ch] = static_cast<unsigned char>(px[ch * plane + p]) / 255.0f;
    }
  }
  return ds;
}

LabeledDataset load_cifar(const std::filesystem::path& dir_in, int which, Split split, LoadOptions opts) {
  std::vector<std::string> files;
  std::filesystem::path dir;
  if (which == 10) {
    if (split == Split::train) {
      for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
    } else {
      files.push_back("test_batch.bin");
    }
    dir = resolve_dir(dir_in, "cifar-10-batches-bin", files.front());
  } else if (which == 100) {
    files.push_back(split == Split::train ? "train.bin" : "test.bin");
    dir = resolve_dir(dir_in, "cifar-100-binary", files.front());
  } else {
    throw ConfigError("CIFAR variant must be 10 or 100");
  }
  std::string bytes;
  for (const auto& f : files) {
    const auto path = dir / f;
    std::string chunk = read_file(path);
    // Validate each file on its own so errors name the offending file.
    const std::size_t record = (which == 10 ? 1 : 2) + kCifarPixels;
    if (chunk.empty() || chunk.size() % record != 0) parse_cifar(chunk, which, split, path.string());
    bytes += chunk;
  }
  auto ds = parse_cifar(bytes, which, split, dir.string());
  check_count(ds, opts, dir.string());
  return ds;
}

LabeledDataset load_dataset(DatasetName name, const std::filesystem::path& dir, Split split, LoadOptions opts) {
  switch (name) {
    case DatasetName::mnist:
      return load_mnist(dir, split, opts);
    case DatasetName::cifar10:
      return load_cifar(dir, 10, split, opts);
    case DatasetName::cifar100:
      return load_cifar(dir, 100, split, opts);
  }
  throw ConfigError("unknown dataset");
}

ChannelStats channel_stats(const LabeledDataset& ds) {
  const std::size_t c = ds.images.dim(-1);
  const std::size_t pixels = ds.images.size() / c;
  std::vector<double> mean(c, 0.0), sq(c, 0.0);
  const float* v = ds.images.raw();
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += v[p * c + ch];
  }
  for (auto& m : mean) m /= static_cast<double>(pixels);
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double d = v[p * c + ch] - mean[ch];
      sq[ch] += d * d;
    }
  }
  ChannelStats stats;
  for (std::size_t ch = 0; ch < c; ++ch) {
    stats.mean.push_back(static_cast<float>(mean[ch]));
    stats.stddev.push_back(static_cast<float>(std::sqrt(sq[ch] / static_cast<double>(pixels))));
  }
  return stats;
}

namespace {

LabeledDataset affine_per_channel(const LabeledDataset& ds, const ChannelStats& stats, bool inverse) {
  const std::size_t c = ds.images.dim(-1);
  if (stats.mean.size() != c || stats.stddev.size() != c) {
    throw ConfigError("normalization statistics have " + std::to_string(stats.mean.size()) + " channels, images have " +
                      std::to_string(c));
  }
  for (float s : stats.stddev) {
    if (!(s > 0.0f)) throw ConfigError("normalization std must be positive for every channel");
  }
  LabeledDataset out = ds;
  float* v = out.images.raw();
  const std::size_t pixels = out.images.size() / c;
  for (std::size_t p = 0; p < pixels; ++p) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      float& x = v[p * c + ch];
      x = inverse ? x * stats.stddev[ch] + stats.mean[ch] : (x - stats.mean[ch]) / stats.stddev[ch];
    }
  }
  return out;
}

}  // namespace

LabeledDataset normalize(const LabeledDataset& ds, const ChannelStats& stats) {
  return affine_per_channel(ds, stats, false);
}

LabeledDataset denormalize(const LabeledDataset& ds, const ChannelStats& stats) {
  return affine_per_channel(ds, stats, true);
}

LabeledDataset take(const LabeledDataset& ds, std::size_t n) {
  if (n >= ds.size()) return ds;
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  auto batch = gather(ds, idx);
  LabeledDataset out;
  out.name = ds.name;
  out.split = ds.split;
  out.n_classes = ds.n_classes;
  out.images = std::move(batch.images);
  out.labels = std::move(batch.labels);
  return out;
}

Batch gather(const LabeledDataset& ds, std::span<const std::size_t> indices) {
  Shape shape = ds.images.shape();
  const std::size_t per = ds.images.size() / shape[0];
  shape[0] = indices.size();
  Batch b{Tensor<float>(shape), {}};
  b.labels.reserve(indices.size());
  float* dst = b.images.raw();
  const float* src = ds.images.raw();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(src + indices[i] * per, per, dst + i * per);
    b.labels.push_back(ds.labels[indices[i]]);
  }
  return b;
}

BatchIterator::BatchIterator(std::size_t n_samples, std::size_t batch_size, std::uint64_t seed, bool shuffle)
    : order_(n_samples), batch_size_(batch_size), seed_(seed), shuffle_(shuffle) {
  if (batch_size == 0) throw ConfigError("batch_size must be at least 1");
  start_epoch(0);
}

void BatchIterator::start_epoch(std::size_t epoch) {
  for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
  if (shuffle_) {
    std::mt19937_64 rng(seed_ ^ (0x9E3779B97F4A7C15ull * (epoch + 1)));
    for (std::size_t i = order_.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng() % i);
      std::swap(order_[i - 1], order_[j]);
    }
  }
  cursor_ = 0;
}

std::optional<std::span<const std::size_t>> BatchIterator::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t len = std::min(batch_size_, order_.size() - cursor_);
  std::span<const std::size_t> out(order_.data() + cursor_, len);
  cursor_ += len;
  return out;
}

}  // namespace ninformer
