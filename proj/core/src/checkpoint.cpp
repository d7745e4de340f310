#include "ninformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace ninformer {

namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_ += s;
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(const std::string& in) : in_(in) {}

  std::uint32_t u32() {
    need(4, "u32");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string bytes(const char* what) {
    const std::uint32_t n = u32();
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string fixed(std::size_t n, const char* what) {
    need(n, what);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated reading " + std::string(what) + " at byte offset " + std::to_string(pos_));
    }
  }

  const std::string& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.raw(kCheckpointMagic, sizeof kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.bytes(to_json(ckpt.config));
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : t.data()) w.f32(v);
  }
  return w.take();
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.fixed(sizeof kCheckpointMagic, "magic") != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    throw FormatError("not a checkpoint: bad magic at byte offset 0");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  try {
    ckpt.config = model_config_from_json(r.bytes("config"));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config unreadable: ") + e.what());
  }
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes("parameter name");
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank) + " for " + name);
    Shape shape(rank);
    for (auto& d : shape) {
      d = r.u32();
      if (d == 0) throw FormatError("zero dimension in parameter " + name);
    }
    const std::size_t n = numel(shape);
    if (n > (bytes.size() - r.offset()) / 4) {
      throw FormatError("checkpoint truncated in values of " + name + " at byte offset " + std::to_string(r.offset()));
    }
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32();
    ckpt.params.emplace_back(std::move(name), Tensor<float>(std::move(shape), std::move(values)));
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint at byte offset " + std::to_string(r.offset()));
  return ckpt;
}

template <typename T>
Checkpoint make_checkpoint(const Model<T>& model) {
  Checkpoint ckpt;
  ckpt.config = model.config();
  for (const auto& [name, var] : model.params()) ckpt.params.emplace_back(name, var.value().template cast<float>());
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const std::string bytes = serialize_checkpoint(ckpt);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str());
}

template <typename T>
void restore_parameters(Model<T>& model, const Checkpoint& ckpt) {
  if (!(ckpt.config == model.config())) throw ConfigError("checkpoint config does not match the model config");
  const auto& params = model.params();
  if (ckpt.params.size() != params.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(ckpt.params.size()) + " tensors, model expects " +
                      std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& [name, var] = params[i];
    const auto& [ck_name, ck_value] = ckpt.params[i];
    if (ck_name != name || ck_value.shape() != var.value().shape()) {
      throw ConfigError("checkpoint tensor " + ck_name + " " + to_string(ck_value.shape()) +
                        " does not match model tensor " + name + " " + to_string(var.value().shape()));
    }
    Variable<T> target = var;
    auto dst = target.mutable_value().data();
    auto src = ck_value.data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<T>(src[j]);
  }
}

template <typename T>
std::uint64_t fingerprint(const ParamStore<T>& params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& [name, var] : params) {
    mix(name.data(), name.size());
    for (auto d : var.shape()) mix(&d, sizeof d);
    mix(var.value().raw(), var.value().size() * sizeof(T));
  }
  return h;
}

template Checkpoint make_checkpoint(const Model<float>&);
template Checkpoint make_checkpoint(const Model<double>&);
template void restore_parameters(Model<float>&, const Checkpoint&);
template void restore_parameters(Model<double>&, const Checkpoint&);
template std::uint64_t fingerprint(const ParamStore<float>&);
template std::uint64_t fingerprint(const ParamStore<double>&);

}  // namespace ninformer
