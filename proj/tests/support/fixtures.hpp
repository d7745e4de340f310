#pragma once

// Byte-level builders for MNIST IDX and CIFAR binary files with known pixel
// values.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace fixtures {

inline void put_be32(std::string& out, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<char>((v >> shift) & 0xFF));
}

// Pixel (i, r, c) of image i in the MNIST fixtures.
inline unsigned char mnist_pixel(std::size_t i, std::size_t r, std::size_t c) {
  return static_cast<unsigned char>((i * 37 + r * 28 + c) % 256);
}

inline std::string idx_images(std::size_t n, std::uint32_t magic = 2051, std::uint32_t rows = 28) {
  std::string out;
  put_be32(out, magic);
  put_be32(out, static_cast<std::uint32_t>(n));
  put_be32(out, rows);
  put_be32(out, 28);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < 28; ++c) out.push_back(static_cast<char>(mnist_pixel(i, r, c)));
    }
  }
  return out;
}

inline std::string idx_labels(const std::vector<unsigned char>& labels, std::uint32_t magic = 2049) {
  std::string out;
  put_be32(out, magic);
  put_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (auto l : labels) out.push_back(static_cast<char>(l));
  return out;
}

// Channel value of record i at (r, c, ch) in the CIFAR fixtures.
inline unsigned char cifar_pixel(std::size_t i, std::size_t r, std::size_t c, std::size_t ch) {
  return static_cast<unsigned char>((i * 11 + r * 32 + c + ch * 85) % 256);
}

// Records in the on-disk layout: label byte(s) then the R, G and B planes.
inline std::string cifar_records(const std::vector<std::vector<unsigned char>>& label_bytes, std::size_t first = 0) {
  std::string out;
  for (std::size_t i = 0; i < label_bytes.size(); ++i) {
    for (auto b : label_bytes[i]) out.push_back(static_cast<char>(b));
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t r = 0; r < 32; ++r) {
        for (std::size_t c = 0; c < 32; ++c) out.push_back(static_cast<char>(cifar_pixel(first + i, r, c, ch)));
      }
    }
  }
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// A throwaway directory removed on scope exit.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("ninformer_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace fixtures
