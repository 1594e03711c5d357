// Synthetic dynamic-scene generator: a textured static background, static
// highlights near radiance 1 and rigidly translating shapes, exposed through
// an 8-bit camera model at three EVs.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "hyhdr/errors.hpp"
#include "hyhdr/hdr.hpp"
#include "hyhdr/rng.hpp"
#include "hyhdr/tensor.hpp"

namespace hyhdr {

struct MovingShape {
  enum class Kind { kRect, kDisk };
  Kind kind = Kind::kDisk;
  double center_y = 0;  ///< position in the reference frame
  double center_x = 0;
  double radius = 4;    ///< disk radius, or rect half-height
  double half_width = 4;
  std::array<float, 3> radiance{0.5f, 0.5f, 0.5f};
  double dy = 0;  ///< displacement per frame, pixels
  double dx = 0;

  bool covers(double y, double x, int frame) const {
    const double off = static_cast<double>(frame - 2);
    const double cy = center_y + off * dy;
    const double cx = center_x + off * dx;
    if (kind == Kind::kDisk) return (y - cy) * (y - cy) + (x - cx) * (x - cx) <= radius * radius;
    return std::abs(y - cy) <= radius && std::abs(x - cx) <= half_width;
  }
};

struct Highlight {
  double center_y = 0;
  double center_x = 0;
  double radius = 3;
  float level = 0.95f;
};

struct SceneSpec {
  int height = 64;
  int width = 64;
  std::uint64_t texture_seed = 0;
  std::vector<MovingShape> shapes;
  std::vector<Highlight> highlights;
  std::array<double, 3> evs{-2.0, 0.0, 2.0};
  double max_displacement = 8;

  void validate() const {
    if (height <= 0 || width <= 0) throw ConfigError("scene size must be positive");
    if (!(evs[0] <= evs[1] && evs[1] <= evs[2])) throw ConfigError("scene EVs must be ascending");
    for (const MovingShape& s : shapes) {
      if (std::abs(s.dy) > max_displacement || std::abs(s.dx) > max_displacement) {
        throw ConfigError("shape displacement exceeds max_displacement");
      }
      for (float r : s.radiance) {
        if (!(r >= 0.0f && r <= 1.0f)) throw ConfigError("shape radiance outside [0, 1]");
      }
    }
    for (const Highlight& h : highlights) {
      if (!(h.level >= 0.0f && h.level <= 1.0f)) throw ConfigError("highlight level outside [0, 1]");
    }
  }
};

/// Stack plus the ghost-free ground truth rendered at the reference positions.
struct Sample {
  ExposureStack stack;
  HdrImage gt;
};

/// 8-bit code -> normalised value; shared by the camera model and the PPM reader.
inline float from_8bit(int code) { return static_cast<float>(code) / 255.0f; }

inline int to_8bit(double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

/// Inverse camera model: L = quantize8(clip((R t)^(1/gamma), 0, 1)).
inline LdrFrame expose_ldr(const HdrImage& radiance, double t, double gamma = kDefaultGamma) {
  if (!(t > 0)) throw DomainError("expose_ldr: exposure time must be positive");
  Tensor<float> px(radiance.radiance.dims());
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double e = static_cast<double>(radiance.radiance[i]) * t;
    const double l = e >= 1.0 ? 1.0 : std::pow(std::max(e, 0.0), 1.0 / gamma);
    px[i] = from_8bit(to_8bit(l));
  }
  return LdrFrame{std::move(px), t, std::log2(t)};
}

/// Radiance of the scene with shapes at their positions in frame (1..3).
inline Tensor<float> render_radiance(const SceneSpec& spec, int frame, std::uint64_t seed) {
  const int h = spec.height, w = spec.width;
  SplitMix64 rng(SplitMix64::mix(seed, spec.texture_seed));
  // Background: a few oriented sinusoids per channel plus a coarse gradient.
  struct Wave {
    double fy, fx, phase, amp;
  };
  std::array<std::array<Wave, 3>, 3> waves{};
  std::array<double, 3> base{}, grad_y{}, grad_x{};
  for (int c = 0; c < 3; ++c) {
    base[c] = rng.uniform(0.08, 0.3);
    grad_y[c] = rng.uniform(-0.1, 0.1);
    grad_x[c] = rng.uniform(-0.1, 0.1);
    for (auto& wv : waves[c]) {
      const double freq = rng.uniform(0.05, 0.6);
      const double ang = rng.uniform(0.0, std::numbers::pi);
      wv = {freq * std::sin(ang), freq * std::cos(ang), rng.uniform(0.0, 2 * std::numbers::pi), rng.uniform(0.02, 0.07)};
    }
  }
  Tensor<float> r(Shape{h, w, 3});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v = base[c] + grad_y[c] * y / h + grad_x[c] * x / w;
        for (const Wave& wv : waves[c]) v += wv.amp * std::sin(wv.fy * y + wv.fx * x + wv.phase);
        r.at(y, x, c) = static_cast<float>(std::clamp(v, 0.01, 1.0));
      }
      for (const Highlight& hl : spec.highlights) {
        const double d2 = (y - hl.center_y) * (y - hl.center_y) + (x - hl.center_x) * (x - hl.center_x);
        if (d2 <= hl.radius * hl.radius) {
          for (int c = 0; c < 3; ++c) r.at(y, x, c) = hl.level;
        }
      }
      for (const MovingShape& s : spec.shapes) {
        if (s.covers(y, x, frame)) {
          for (int c = 0; c < 3; ++c) r.at(y, x, c) = s.radiance[static_cast<std::size_t>(c)];
        }
      }
    }
  }
  return r;
}

/// Binary coverage mask [H x W] of one shape in frame (1..3).
inline Tensor<float> render_mask(const SceneSpec& spec, std::size_t shape, int frame) {
  Tensor<float> m(Shape{spec.height, spec.width});
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      if (spec.shapes.at(shape).covers(y, x, frame)) m[static_cast<std::size_t>(y) * spec.width + x] = 1.0f;
    }
  }
  return m;
}

inline Sample synth_scene(const SceneSpec& spec, std::uint64_t seed) {
  spec.validate();
  Sample s;
  for (int f = 1; f <= 3; ++f) {
    const HdrImage radiance{render_radiance(spec, f, seed)};
    s.stack.frames[static_cast<std::size_t>(f - 1)] = expose_ldr(radiance, std::exp2(spec.evs[static_cast<std::size_t>(f - 1)]));
    s.stack.frames[static_cast<std::size_t>(f - 1)].ev = spec.evs[static_cast<std::size_t>(f - 1)];
    if (f == 2) s.gt = radiance;
  }
  return s;
}

/// Random scene layout: 2-4 moving shapes (integer displacements up to
/// max_displacement) and 1-2 highlights.
inline SceneSpec random_scene(int height, int width, std::uint64_t seed, double max_displacement = 4) {
  SplitMix64 rng(SplitMix64::mix(seed, 0x5CE7E));
  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.texture_seed = rng.next();
  spec.max_displacement = max_displacement;
  const int m = std::min(height, width);
  const int nshapes = 2 + static_cast<int>(rng.below(3));
  const int dmax = static_cast<int>(max_displacement);
  for (int i = 0; i < nshapes; ++i) {
    MovingShape s;
    s.kind = rng.below(2) ? MovingShape::Kind::kDisk : MovingShape::Kind::kRect;
    s.center_y = rng.uniform(0, height);
    s.center_x = rng.uniform(0, width);
    s.radius = rng.uniform(0.06, 0.18) * m;
    s.half_width = rng.uniform(0.06, 0.18) * m;
    const bool bright = rng.below(3) == 0;
    for (auto& v : s.radiance) v = static_cast<float>(bright ? rng.uniform(0.6, 1.0) : rng.uniform(0.02, 0.5));
    s.dy = static_cast<double>(static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * dmax + 1))) - dmax);
    s.dx = static_cast<double>(static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * dmax + 1))) - dmax);
    spec.shapes.push_back(s);
  }
  const int nhl = 1 + static_cast<int>(rng.below(2));
  for (int i = 0; i < nhl; ++i) {
    Highlight hl;
    hl.center_y = rng.uniform(0, height);
    hl.center_x = rng.uniform(0, width);
    hl.radius = rng.uniform(0.05, 0.15) * m;
    hl.level = static_cast<float>(rng.uniform(0.9, 1.0));
    spec.highlights.push_back(hl);
  }
  return spec;
}

namespace detail {

inline Tensor<float> crop(const Tensor<float>& img, int y0, int x0, int size) {
  const int c = img.dims()[2];
  Tensor<float> out(Shape{size, size, c});
  for (int y = 0; y < size; ++y) {
    std::copy_n(&img.at(y0 + y, x0, 0), static_cast<std::size_t>(size) * c, &out.at(y, 0, 0));
  }
  return out;
}

}  // namespace detail

/// Regular grid of size x size crops at the given stride, frames and GT cut
/// identically, row-major order.
inline std::vector<Sample> crop_patches(const Sample& sample, int size, int stride) {
  const int h = sample.gt.height(), w = sample.gt.width();
  if (size <= 0 || stride <= 0) throw ConfigError("crop size and stride must be positive");
  if (size > h || size > w) {
    throw ConfigError("crop size " + std::to_string(size) + " exceeds image " + std::to_string(h) + "x" + std::to_string(w));
  }
  std::vector<Sample> out;
  for (int y = 0; y + size <= h; y += stride) {
    for (int x = 0; x + size <= w; x += stride) {
      Sample c;
      for (std::size_t f = 0; f < 3; ++f) {
        const LdrFrame& src = sample.stack.frames[f];
        c.stack.frames[f] = LdrFrame{detail::crop(src.pixels, y, x, size), src.exposure_time, src.ev};
      }
      c.gt = HdrImage{detail::crop(sample.gt.radiance, y, x, size)};
      out.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace hyhdr
