// Binary PPM (P6, 8-bit) and PFM (little-endian, bottom-up rows) codecs.
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <sstream>
#include <string>
#include <vector>

#include "hyhdr/errors.hpp"
#include "hyhdr/tensor.hpp"

namespace hyhdr {

namespace detail {

inline void skip_header_space(std::istream& in) {
  while (true) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      in.get();
    } else {
      return;
    }
  }
}

inline long read_header_int(std::istream& in, const std::string& path) {
  skip_header_space(in);
  long v = 0;
  if (!(in >> v)) throw FormatError(path + ": malformed header");
  return v;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

constexpr long kMaxImageSide = 1 << 15;

}  // namespace detail

/// [H x W x 3] in [0, 1] -> P6; values are rounded to the nearest code.
template <class T>
void write_ppm(const std::string& path, const Tensor<T>& img) {
  if (img.rank() != 3 || img.dims()[2] != 3) throw ShapeError("write_ppm expects H x W x 3, got " + shape_str(img.dims()));
  std::ofstream out = detail::open_out(path);
  out << "P6\n" << img.dims()[1] << ' ' << img.dims()[0] << "\n255\n";
  std::vector<unsigned char> bytes(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::isfinite(img[i]) ? std::clamp(static_cast<double>(img[i]), 0.0, 1.0) : 0.0;
    bytes[i] = static_cast<unsigned char>(std::lround(v * 255.0));
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

inline Tensor<float> read_ppm(const std::string& path) {
  std::ifstream in = detail::open_in(path);
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != '6') throw FormatError(path + ": not a binary PPM (P6)");
  const long w = detail::read_header_int(in, path);
  const long h = detail::read_header_int(in, path);
  const long maxval = detail::read_header_int(in, path);
  if (w <= 0 || h <= 0 || w > detail::kMaxImageSide || h > detail::kMaxImageSide) {
    throw FormatError(path + ": bad dimensions");
  }
  if (maxval != 255) throw FormatError(path + ": only 8-bit PPM is supported");
  in.get();  // single whitespace before the raster
  Tensor<float> img(Shape{static_cast<int>(h), static_cast<int>(w), 3});
  std::vector<unsigned char> bytes(img.size());
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw FormatError(path + ": truncated raster");
  for (std::size_t i = 0; i < bytes.size(); ++i) img[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

/// Colour PFM, scale -1 (little-endian), rows stored bottom-up.
inline void write_pfm(const std::string& path, const Tensor<float>& img) {
  if (img.rank() != 3 || img.dims()[2] != 3) throw ShapeError("write_pfm expects H x W x 3, got " + shape_str(img.dims()));
  const int h = img.dims()[0], w = img.dims()[1];
  std::ofstream out = detail::open_out(path);
  out << "PF\n" << w << ' ' << h << "\n-1.0\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3 * 4);
  for (int y = h - 1; y >= 0; --y) {
    for (int i = 0; i < w * 3; ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(img[static_cast<std::size_t>(y) * w * 3 + i]);
      for (int b = 0; b < 4; ++b) row[static_cast<std::size_t>(i) * 4 + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed: " + path);
}

inline Tensor<float> read_pfm(const std::string& path) {
  std::ifstream in = detail::open_in(path);
  char magic[2] = {};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || magic[1] != 'F') throw FormatError(path + ": not a colour PFM");
  const long w = detail::read_header_int(in, path);
  const long h = detail::read_header_int(in, path);
  if (w <= 0 || h <= 0 || w > detail::kMaxImageSide || h > detail::kMaxImageSide) {
    throw FormatError(path + ": bad dimensions");
  }
  detail::skip_header_space(in);
  double scale = 0;
  if (!(in >> scale) || scale == 0) throw FormatError(path + ": bad scale");
  in.get();
  const bool little = scale < 0;
  Tensor<float> img(Shape{static_cast<int>(h), static_cast<int>(w), 3});
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3 * 4);
  for (long y = h - 1; y >= 0; --y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (in.gcount() != static_cast<std::streamsize>(row.size())) throw FormatError(path + ": truncated raster");
    for (long i = 0; i < w * 3; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        const int shift = little ? 8 * b : 8 * (3 - b);
        bits |= static_cast<std::uint32_t>(row[static_cast<std::size_t>(i) * 4 + b]) << shift;
      }
      img[static_cast<std::size_t>(y * w * 3 + i)] = std::bit_cast<float>(bits);
    }
  }
  return img;
}

/// FNV-1a over a file's bytes.
inline std::uint64_t file_hash(const std::string& path) {
  std::ifstream in = detail::open_in(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace hyhdr
