#pragma once

// Checkpoint container, little-endian:
//   "SPXC" | u32 version | u32 tensor count
//   per tensor: u16 name length | name | u8 rank | u32 dims[rank] | f32 data
// Files are written to a temporary sibling and renamed into place.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pcnet/error.hpp"
#include "pcnet/net.hpp"

namespace pcnet {

inline constexpr char kCheckpointMagic[4] = {'S', 'P', 'X', 'C'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw CheckpointTruncatedError("checkpoint truncated: " + path_);
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(static_cast<std::uint8_t>(bytes_[pos_]) |
                                              (static_cast<std::uint8_t>(bytes_[pos_ + 1]) << 8));
    pos_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

// Writes atomically: the destination either keeps its old content or holds
// the complete new file.
inline void write_file_atomic(const std::string& path, const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp + " -> " + path + ": " + ec.message());
}

inline void save_arrays(const std::string& path, const std::vector<NamedArray>& arrays) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    if (a.name.size() > 0xffff || a.shape.size() > 0xff) throw UsageError("checkpoint entry too large: " + a.name);
    detail::put_u16(out, static_cast<std::uint16_t>(a.name.size()));
    out += a.name;
    out.push_back(static_cast<char>(a.shape.size()));
    for (auto d : a.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : a.data) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      detail::put_u32(out, bits);
    }
  }
  write_file_atomic(path, out);
}

inline std::vector<NamedArray> load_arrays(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::Reader r(bytes, path);
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0)
    throw CheckpointVersionError("not a checkpoint (bad magic): " + path);
  r.str(4);
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  const auto count = r.u32();
  std::vector<NamedArray> arrays;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    a.name = r.str(r.u16());
    const auto rank = r.u8();
    for (std::uint8_t d = 0; d < rank; ++d) a.shape.push_back(r.u32());
    const std::size_t n = numel(a.shape);
    r.need(4 * n);
    a.data.resize(n);
    for (auto& v : a.data) {
      const auto bits = r.u32();
      std::memcpy(&v, &bits, 4);
    }
    arrays.push_back(std::move(a));
  }
  if (!r.done()) throw CheckpointTruncatedError("trailing bytes in checkpoint " + path);
  return arrays;
}

template <typename T>
void save_checkpoint(const Params<T>& params, const std::string& path) {
  std::vector<NamedArray> arrays;
  for (const auto& [name, t] : params) arrays.push_back({name, t.shape(), {t.data().begin(), t.data().end()}});
  save_arrays(path, arrays);
}

// Validates names and shapes against the layout of `cfg`.
template <typename T>
Params<T> params_from_arrays(const std::vector<NamedArray>& arrays, const NetConfig& cfg) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : arrays) by_name[a.name] = &a;
  Params<T> params;
  for (const auto& spec : param_layout(cfg)) {
    auto it = by_name.find(spec.name);
    if (it == by_name.end()) throw CheckpointShapeError("checkpoint is missing tensor " + spec.name);
    if (it->second->shape != spec.shape)
      throw CheckpointShapeError("tensor " + spec.name + " has shape " + to_string(it->second->shape) +
                                 ", configuration expects " + to_string(spec.shape));
    std::vector<T> data(it->second->data.begin(), it->second->data.end());
    params.add(spec.name, Tensor<T>(spec.shape, std::move(data), true));
  }
  return params;
}

template <typename T>
Params<T> load_checkpoint(const std::string& path, const NetConfig& cfg) {
  return params_from_arrays<T>(load_arrays(path), cfg);
}

// Recovers the architecture hyper-parameters recorded implicitly in tensor shapes.
inline NetConfig config_from_arrays(const std::vector<NamedArray>& arrays) {
  auto find = [&](const std::string& name) -> const NamedArray& {
    for (const auto& a : arrays)
      if (a.name == name) return a;
    throw CheckpointShapeError("checkpoint is missing tensor " + name);
  };
  NetConfig cfg;
  cfg.base_channels = find("enc1.conv_a.weight").shape.at(0);
  cfg.embed_dim = find("head.assoc.weight").shape.at(1);
  cfg.sr_channels = find("head.sr.weight").shape.at(0);
  cfg.use_skips = find("dec1.fuse.weight").shape.at(1) == 2 * cfg.base_channels;
  return cfg;
}

}  // namespace pcnet
