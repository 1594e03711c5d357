// Shared test helpers and independent reference implementations.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hyhdr/hyhdr.hpp"

namespace hyhdr::testing {

template <class T>
Tensor<T> random_tensor(const Shape& dims, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(dims);
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// Zero-padded "same" convolution, stride 1, straight loops. w: k x k x Cin x Cout.
template <class T>
Tensor<T> ref_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  const int h = x.dims()[0], wd = x.dims()[1], cin = x.dims()[2];
  const int k = w.dims()[0], cout = w.dims()[3];
  const int pad = (k - 1) / 2;
  Tensor<T> out(Shape{h, wd, cout});
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < wd; ++xx) {
      for (int o = 0; o < cout; ++o) {
        long double acc = b[static_cast<std::size_t>(o)];
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int sy = y + ky - pad, sx = xx + kx - pad;
            if (sy < 0 || sy >= h || sx < 0 || sx >= wd) continue;
            for (int i = 0; i < cin; ++i) {
              acc += static_cast<long double>(x.at(sy, sx, i)) *
                     w[((static_cast<std::size_t>(ky) * k + kx) * cin + i) * cout + o];
            }
          }
        }
        out.at(y, xx, o) = static_cast<T>(acc);
      }
    }
  }
  return out;
}

/// Plain (non-deformable) window self-attention over an H x W x C map whose
/// sides are multiples of M: windows read directly by pixel coordinates, no
/// gather/scatter machinery. q = x Wq, k = x Wk, v = x Wv, multi-head.
inline Tensor<double> ref_window_attention(const Tensor<double>& x, const Tensor<double>& wq, const Tensor<double>& wk,
                                           const Tensor<double>& wv, int window, int heads) {
  const int h = x.dims()[0], w = x.dims()[1], c = x.dims()[2];
  auto project = [&](const Tensor<double>& m) {
    Tensor<double> out(Shape{h, w, c});
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int o = 0; o < c; ++o) {
          double acc = 0;
          for (int i = 0; i < c; ++i) acc += x.at(y, xx, i) * m[static_cast<std::size_t>(i) * c + o];
          out.at(y, xx, o) = acc;
        }
    return out;
  };
  const Tensor<double> q = project(wq), k = project(wk), v = project(wv);
  const int hd = c / heads;
  Tensor<double> out(Shape{h, w, c});
  const int n = window * window;
  for (int wy = 0; wy < h / window; ++wy) {
    for (int wx = 0; wx < w / window; ++wx) {
      for (int hh = 0; hh < heads; ++hh) {
        for (int i = 0; i < n; ++i) {
          const int iy = wy * window + i / window, ix = wx * window + i % window;
          std::vector<double> s(static_cast<std::size_t>(n));
          double mx = -1e300;
          for (int j = 0; j < n; ++j) {
            const int jy = wy * window + j / window, jx = wx * window + j % window;
            double dot = 0;
            for (int d = 0; d < hd; ++d) dot += q.at(iy, ix, hh * hd + d) * k.at(jy, jx, hh * hd + d);
            s[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(hd));
            mx = std::max(mx, s[static_cast<std::size_t>(j)]);
          }
          double z = 0;
          for (double& e : s) z += (e = std::exp(e - mx));
          for (int d = 0; d < hd; ++d) {
            double acc = 0;
            for (int j = 0; j < n; ++j) {
              const int jy = wy * window + j / window, jx = wx * window + j % window;
              acc += s[static_cast<std::size_t>(j)] / z * v.at(jy, jx, hh * hd + d);
            }
            out.at(iy, ix, hh * hd + d) = acc;
          }
        }
      }
    }
  }
  return out;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("hyhdr_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

/// Tiny architecture used by gradient and property tests.
inline ModelConfig tiny_config(AlignmentMode mode = AlignmentMode::kGated) {
  ModelConfig c;
  c.channels = 8;
  c.window = 4;
  c.rdtb_count = 1;
  c.stl_per_rdtb = 2;
  c.alignment = mode;
  return c;
}

}  // namespace hyhdr::testing
