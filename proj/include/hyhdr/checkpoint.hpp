// Checkpoint container:
//   "HYHD" | u32 version | u32 count | count x (u32 name_len, name, u32 ndim,
//   u32 dims[ndim], f32 data[]), all little-endian.
// Model tensors keep their own names; optimizer moments are stored as
// "adam.m/<name>" and "adam.v/<name>"; "meta/config" holds the training config
// JSON one byte per float and "meta/step" the step as two 24-bit halves.
#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyhdr/errors.hpp"
#include "hyhdr/params.hpp"
#include "hyhdr/tensor.hpp"

namespace hyhdr {

inline constexpr char kCheckpointMagic[4] = {'H', 'Y', 'H', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor<float>>>;

struct Checkpoint {
  ModelParams params;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t step = 0;
  ModelParams adam_m;  ///< empty when no optimizer state was saved
  ModelParams adam_v;
};

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) buf.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + b])) << (8 * b);
    pos_ += 4;
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError(path_ + ": truncated checkpoint");
  }

  const std::string& path() const { return path_; }

 private:
  std::string data_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void write_tensor_file(const std::string& path, const NamedTensors& tensors) {
  std::string buf(kCheckpointMagic, 4);
  detail::put_u32(buf, kCheckpointVersion);
  detail::put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(buf, static_cast<std::uint32_t>(name.size()));
    buf += name;
    detail::put_u32(buf, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.dims()) detail::put_u32(buf, static_cast<std::uint32_t>(d));
    for (float v : t.values()) detail::put_u32(buf, std::bit_cast<std::uint32_t>(v));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline NamedTensors read_tensor_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  detail::ByteReader r(std::move(data), path);
  if (r.remaining() < 4 || r.bytes(4) != std::string_view(kCheckpointMagic, 4)) {
    throw FormatError(path + ": bad checkpoint magic");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError(path + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
  }
  const std::uint32_t count = r.u32();
  NamedTensors out;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    if (name_len == 0 || name_len > 4096) throw FormatError(path + ": bad tensor name length");
    std::string name = r.bytes(name_len);
    const std::uint32_t ndim = r.u32();
    if (ndim > 8) throw FormatError(path + ": bad rank for " + name);
    Shape dims;
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      const std::uint32_t v = r.u32();
      if (v == 0 || v > (1u << 30)) throw FormatError(path + ": bad dimension for " + name);
      dims.push_back(static_cast<int>(v));
      n *= v;
      if (n > r.remaining()) throw FormatError(path + ": truncated checkpoint");
    }
    r.need(n * 4);
    Tensor<float> t = ndim ? Tensor<float>(dims) : Tensor<float>::scalar(0);
    for (std::uint64_t k = 0; k < n; ++k) t[k] = std::bit_cast<float>(r.u32());
    out.emplace_back(std::move(name), std::move(t));
  }
  if (r.remaining()) throw FormatError(path + ": trailing bytes after checkpoint");
  return out;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  NamedTensors t;
  for (std::size_t i = 0; i < ck.params.size(); ++i) t.emplace_back(ck.params.names()[i], ck.params.values()[i]);
  for (std::size_t i = 0; i < ck.adam_m.size(); ++i) t.emplace_back("adam.m/" + ck.adam_m.names()[i], ck.adam_m.values()[i]);
  for (std::size_t i = 0; i < ck.adam_v.size(); ++i) t.emplace_back("adam.v/" + ck.adam_v.names()[i], ck.adam_v.values()[i]);
  const std::string cfg = ck.config.dump();
  Tensor<float> cfg_t(Shape{static_cast<int>(cfg.size())});
  for (std::size_t i = 0; i < cfg.size(); ++i) cfg_t[i] = static_cast<float>(static_cast<unsigned char>(cfg[i]));
  t.emplace_back("meta/config", std::move(cfg_t));
  Tensor<float> step(Shape{2});
  step[0] = static_cast<float>(ck.step & 0xFFFFFF);
  step[1] = static_cast<float>(ck.step >> 24);
  if ((ck.step >> 48) != 0) throw ConfigError("step counter too large to store");
  t.emplace_back("meta/step", std::move(step));
  write_tensor_file(path, t);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  Checkpoint ck;
  bool have_config = false, have_step = false;
  for (auto& [name, t] : read_tensor_file(path)) {
    if (name.rfind("adam.m/", 0) == 0) {
      ck.adam_m.add(name.substr(7), std::move(t));
    } else if (name.rfind("adam.v/", 0) == 0) {
      ck.adam_v.add(name.substr(7), std::move(t));
    } else if (name == "meta/config") {
      std::string s(t.size(), '\0');
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (!(t[i] >= 0 && t[i] <= 255)) throw FormatError(path + ": corrupt config block");
        s[i] = static_cast<char>(static_cast<unsigned char>(t[i]));
      }
      try {
        ck.config = nlohmann::json::parse(s);
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(path + ": corrupt config block: " + e.what());
      }
      have_config = true;
    } else if (name == "meta/step") {
      if (t.size() != 2) throw FormatError(path + ": corrupt step block");
      ck.step = static_cast<std::uint64_t>(t[0]) | (static_cast<std::uint64_t>(t[1]) << 24);
      have_step = true;
    } else {
      ck.params.add(name, std::move(t));
    }
  }
  if (!have_config || !have_step) throw FormatError(path + ": checkpoint lacks meta/config or meta/step");
  return ck;
}

}  // namespace hyhdr
