#include <gtest/gtest.h>

#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "ninformer/data.hpp"

using namespace ninformer;
using fixtures::TempDir;

TEST(Mnist, TwoImageFixtureParsesByteForByte) {
  auto ds = parse_mnist(fixtures::idx_images(2), fixtures::idx_labels({7, 3}), Split::test);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.images.shape(), (Shape{2, 28, 28, 1}));
  EXPECT_EQ(ds.labels, (std::vector<std::uint16_t>{7, 3}));
  EXPECT_EQ(ds.n_classes, 10u);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t r = 0; r < 28; ++r) {
      for (std::size_t c = 0; c < 28; ++c) {
        ASSERT_EQ(ds.images.at({i, r, c, 0}), fixtures::mnist_pixel(i, r, c) / 255.0f);
      }
    }
  }
  for (float v : ds.images.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Mnist, FormatErrors) {
  const auto images = fixtures::idx_images(2);
  const auto labels = fixtures::idx_labels({1, 2});
  EXPECT_THROW(parse_mnist(fixtures::idx_images(2, 2049), labels, Split::train), FormatError);
  EXPECT_THROW(parse_mnist(images, fixtures::idx_labels({1, 2}, 2051), Split::train), FormatError);
  EXPECT_THROW(parse_mnist(fixtures::idx_images(2, 2051, 27), labels, Split::train), FormatError);
  EXPECT_THROW(parse_mnist(images, fixtures::idx_labels({1, 2, 3}), Split::train), FormatError);
  EXPECT_THROW(parse_mnist(images, fixtures::idx_labels({1, 12}), Split::train), FormatError);
  try {
    parse_mnist(images.substr(0, 16 + 784 + 100), labels, Split::train);  // truncated mid-image
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset"), std::string::npos) << e.what();
  }
}

TEST(Mnist, LoaderFindsFilesAndChecksCounts) {
  TempDir dir("mnist");
  fixtures::write_file(dir.path() / "t10k-images-idx3-ubyte", fixtures::idx_images(2));
  fixtures::write_file(dir.path() / "t10k-labels-idx1-ubyte", fixtures::idx_labels({4, 5}));
  EXPECT_THROW(load_mnist(dir.path(), Split::test), FormatError);  // 2 is not the official 10000
  auto ds = load_mnist(dir.path(), Split::test, LoadOptions{false});
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_THROW(load_mnist(dir.path(), Split::train, LoadOptions{false}), FormatError);
}

TEST(Cifar, TenClassFixtureParsesByteForByte) {
  auto ds = parse_cifar(fixtures::cifar_records({{9}, {0}}), 10, Split::test);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.images.shape(), (Shape{2, 32, 32, 3}));
  EXPECT_EQ(ds.labels, (std::vector<std::uint16_t>{9, 0}));
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t r = 0; r < 32; ++r) {
      for (std::size_t c = 0; c < 32; ++c) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
          ASSERT_EQ(ds.images.at({i, r, c, ch}), fixtures::cifar_pixel(i, r, c, ch) / 255.0f);
        }
      }
    }
  }
}

TEST(Cifar, HundredClassUsesFineLabel) {
  auto ds = parse_cifar(fixtures::cifar_records({{3, 99}, {19, 42}}), 100, Split::train);
  EXPECT_EQ(ds.labels, (std::vector<std::uint16_t>{99, 42}));
  EXPECT_EQ(ds.n_classes, 100u);
  EXPECT_EQ(ds.images.at({1, 5, 7, 2}), fixtures::cifar_pixel(1, 5, 7, 2) / 255.0f);
}

TEST(Cifar, FormatErrors) {
  const auto good = fixtures::cifar_records({{1}, {2}});
  EXPECT_THROW(parse_cifar(good.substr(0, good.size() - 1), 10, Split::test), FormatError);
  EXPECT_THROW(parse_cifar(fixtures::cifar_records({{10}}), 10, Split::test), FormatError);
  EXPECT_THROW(parse_cifar(fixtures::cifar_records({{0, 100}}), 100, Split::test), FormatError);
  EXPECT_THROW(parse_cifar(good, 20, Split::test), ConfigError);
}

TEST(Cifar, LoaderConcatenatesTrainingBatches) {
  TempDir dir("cifar10");
  const auto sub = dir.path() / "cifar-10-batches-bin";
  for (int b = 1; b <= 5; ++b) {
    fixtures::write_file(sub / ("data_batch_" + std::to_string(b) + ".bin"),
                         fixtures::cifar_records({{static_cast<unsigned char>(b)}}, b - 1));
  }
  auto ds = load_cifar(dir.path(), 10, Split::train, LoadOptions{false});
  ASSERT_EQ(ds.size(), 5u);
  EXPECT_EQ(ds.labels, (std::vector<std::uint16_t>{1, 2, 3, 4, 5}));
  EXPECT_EQ(ds.images.at({4, 0, 1, 0}), fixtures::cifar_pixel(4, 0, 1, 0) / 255.0f);
  EXPECT_THROW(load_cifar(dir.path(), 10, Split::train), FormatError);
}

TEST(Normalize, RoundTripAndZeroMean) {
  auto ds = parse_cifar(fixtures::cifar_records({{1}, {2}, {3}}), 10, Split::train);
  auto stats = channel_stats(ds);
  auto norm = normalize(ds, stats);
  auto after = channel_stats(norm);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    EXPECT_LT(std::abs(after.mean[ch]), 1e-3);
    EXPECT_NEAR(after.stddev[ch], 1.0, 1e-3);
  }
  auto back = denormalize(norm, stats);
  for (std::size_t i = 0; i < ds.images.size(); ++i) EXPECT_NEAR(back.images[i], ds.images[i], 1e-6);

  auto same = normalize(ds, ChannelStats{{0, 0, 0}, {1, 1, 1}});
  EXPECT_EQ(same.images, ds.images);
  EXPECT_THROW(normalize(ds, ChannelStats{{0, 0, 0}, {1, 0, 1}}), ConfigError);
}

TEST(BatchIterator, CountsAndShortFinalBatch) {
  BatchIterator it(50000, 128, 1, true);
  EXPECT_EQ(it.batches_per_epoch(), 391u);
  it.start_epoch(1);
  std::size_t batches = 0, last = 0;
  while (auto b = it.next()) {
    ++batches;
    last = b->size();
  }
  EXPECT_EQ(batches, 391u);
  EXPECT_EQ(last, 80u);
}

TEST(BatchIterator, EpochCoversEveryIndexOnce) {
  BatchIterator it(1000, 64, 7, true);
  for (std::size_t epoch = 1; epoch <= 3; ++epoch) {
    it.start_epoch(epoch);
    std::vector<std::size_t> seen;
    while (auto b = it.next()) seen.insert(seen.end(), b->begin(), b->end());
    ASSERT_EQ(seen.size(), 1000u);
    std::set<std::size_t> unique(seen.begin(), seen.end());
    EXPECT_EQ(unique.size(), 1000u);
    EXPECT_EQ(*unique.rbegin(), 999u);
  }
}

TEST(BatchIterator, SeededAndUnshuffledOrders) {
  auto collect = [](BatchIterator& it, std::size_t epoch) {
    it.start_epoch(epoch);
    std::vector<std::size_t> order;
    while (auto b = it.next()) order.insert(order.end(), b->begin(), b->end());
    return order;
  };
  BatchIterator a(100, 10, 3, true), b(100, 10, 3, true), c(100, 10, 4, true);
  EXPECT_EQ(collect(a, 1), collect(b, 1));
  EXPECT_NE(collect(a, 1), collect(c, 1));
  EXPECT_NE(collect(a, 1), collect(a, 2));

  BatchIterator plain(25, 10, 3, false);
  plain.start_epoch(1);
  std::size_t expected = 0;
  while (auto batch = plain.next()) {
    for (auto idx : *batch) EXPECT_EQ(idx, expected++);
  }
  EXPECT_EQ(expected, 25u);
}

TEST(Datasets, CanonicalCounts) {
  EXPECT_EQ(canonical_count(DatasetName::mnist, Split::train), 60000u);
  EXPECT_EQ(canonical_count(DatasetName::mnist, Split::test), 10000u);
  EXPECT_EQ(canonical_count(DatasetName::cifar10, Split::train), 50000u);
  EXPECT_EQ(canonical_count(DatasetName::cifar100, Split::test), 10000u);
  EXPECT_EQ(class_count(DatasetName::cifar100), 100u);
  EXPECT_EQ(parse_dataset("cifar10"), DatasetName::cifar10);
  EXPECT_THROW(parse_dataset("svhn"), ConfigError);
}

TEST(Datasets, TakeAndGather) {
  auto ds = parse_cifar(fixtures::cifar_records({{1}, {2}, {3}}), 10, Split::train);
  auto two = take(ds, 2);
  EXPECT_EQ(two.size(), 2u);
  EXPECT_EQ(take(ds, 10).size(), 3u);
  const std::size_t idx[] = {2, 0};
  auto batch = gather(ds, idx);
  EXPECT_EQ(batch.labels, (std::vector<std::uint16_t>{3, 1}));
  EXPECT_EQ(batch.images.at({0, 3, 4, 1}), ds.images.at({2, 3, 4, 1}));
}
