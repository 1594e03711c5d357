// Window partitioning of H x W x C feature maps into M x M token blocks.
//
// A map whose sides are not multiples of M is reflect-padded on the bottom and
// right. A non-zero shift rolls the padded map up/left by `shift` pixels
// before partitioning (shifted[y] = padded[(y + shift) mod Hp]); the reverse
// rolls it back and crops the padding.
#pragma once

#include <memory>
#include <vector>

#include "hyhdr/errors.hpp"
#include "hyhdr/ops.hpp"
#include "hyhdr/tensor.hpp"

namespace hyhdr {

struct WindowGrid {
  int window = 8;
  int shift = 0;
  int height = 0;
  int width = 0;
  int pad_h = 0;
  int pad_w = 0;

  static WindowGrid make(int height, int width, int window, int shift = 0) {
    if (window <= 0) throw ConfigError("window size must be positive, got " + std::to_string(window));
    if (shift < 0 || shift >= window) {
      throw ConfigError("window shift must lie in [0, " + std::to_string(window) + "), got " +
                        std::to_string(shift));
    }
    if (height <= 0 || width <= 0) throw ShapeError("window grid over an empty map");
    WindowGrid g;
    g.window = window;
    g.shift = shift;
    g.height = height;
    g.width = width;
    g.pad_h = (window - height % window) % window;
    g.pad_w = (window - width % window) % window;
    return g;
  }

  int padded_height() const { return height + pad_h; }
  int padded_width() const { return width + pad_w; }
  int windows_y() const { return padded_height() / window; }
  int windows_x() const { return padded_width() / window; }
  int num_windows() const { return windows_y() * windows_x(); }
  int tokens() const { return window * window; }
};

namespace detail {

/// Mirror index into [0, n) without repeating the edge sample.
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i >= n ? period - i : i;
}

inline std::shared_ptr<const std::vector<int>> partition_rows(const WindowGrid& g) {
  auto rows = std::make_shared<std::vector<int>>();
  rows->reserve(static_cast<std::size_t>(g.num_windows()) * g.tokens());
  const int hp = g.padded_height(), wp = g.padded_width();
  for (int wy = 0; wy < g.windows_y(); ++wy) {
    for (int wx = 0; wx < g.windows_x(); ++wx) {
      for (int ty = 0; ty < g.window; ++ty) {
        for (int tx = 0; tx < g.window; ++tx) {
          const int sy = reflect_index((wy * g.window + ty + g.shift) % hp, g.height);
          const int sx = reflect_index((wx * g.window + tx + g.shift) % wp, g.width);
          rows->push_back(sy * g.width + sx);
        }
      }
    }
  }
  return rows;
}

inline std::shared_ptr<const std::vector<int>> reverse_rows(const WindowGrid& g) {
  auto rows = std::make_shared<std::vector<int>>();
  rows->reserve(static_cast<std::size_t>(g.height) * g.width);
  const int hp = g.padded_height(), wp = g.padded_width();
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      const int py = (y - g.shift + hp) % hp;
      const int px = (x - g.shift + wp) % wp;
      const int win = (py / g.window) * g.windows_x() + px / g.window;
      const int tok = (py % g.window) * g.window + px % g.window;
      rows->push_back(win * g.tokens() + tok);
    }
  }
  return rows;
}

}  // namespace detail

/// [H x W x C] -> [nWin x M^2 x C], windows and tokens in row-major order.
template <class T>
Var<T> window_partition(const Var<T>& x, const WindowGrid& grid) {
  detail::require_rank("window_partition", x, 3);
  if (x.dims()[0] != grid.height || x.dims()[1] != grid.width) {
    throw ShapeError("window_partition: map " + shape_str(x.dims()) + " vs grid " +
                     std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
  return gather_rows(x, detail::partition_rows(grid), Shape{grid.num_windows(), grid.tokens(), x.dims()[2]});
}

/// Inverse of window_partition for the same grid; returns [H x W x C].
template <class T>
Var<T> window_reverse(const Var<T>& w, const WindowGrid& grid, int height, int width) {
  detail::require_rank("window_reverse", w, 3);
  if (height != grid.height || width != grid.width || w.dims()[0] != grid.num_windows() ||
      w.dims()[1] != grid.tokens()) {
    throw ShapeError("window_reverse: windows " + shape_str(w.dims()) + " inconsistent with grid for " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  return gather_rows(w, detail::reverse_rows(grid), Shape{height, width, w.dims()[2]});
}

/// Relative-position index table for an M x M window: entry (i, j) addresses a
/// (2M-1)^2 bias table by the offset between tokens i and j.
inline std::vector<int> relative_position_index(int window) {
  const int n = window * window;
  const int span = 2 * window - 1;
  std::vector<int> idx(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const int dy = i / window - j / window + window - 1;
      const int dx = i % window - j % window + window - 1;
      idx[static_cast<std::size_t>(i) * n + j] = dy * span + dx;
    }
  }
  return idx;
}

inline constexpr double kShiftMaskValue = -100.0;

/// Additive attention mask [nWin x M^2 x M^2] for a shifted grid: tokens that
/// were wrapped around by the roll may not attend to tokens from the other
/// side. All zeros when shift == 0.
template <class T>
Tensor<T> shift_attention_mask(const WindowGrid& g) {
  const int n = g.tokens();
  Tensor<T> mask(Shape{g.num_windows(), n, n});
  if (g.shift == 0) return mask;
  const int hp = g.padded_height(), wp = g.padded_width();
  auto region = [&](int p, int extent) { return p < extent - g.window ? 0 : (p < extent - g.shift ? 1 : 2); };
  std::vector<int> label(static_cast<std::size_t>(n));
  for (int wy = 0; wy < g.windows_y(); ++wy) {
    for (int wx = 0; wx < g.windows_x(); ++wx) {
      for (int t = 0; t < n; ++t) {
        const int py = wy * g.window + t / g.window;
        const int px = wx * g.window + t % g.window;
        label[static_cast<std::size_t>(t)] = region(py, hp) * 3 + region(px, wp);
      }
      const std::size_t base = static_cast<std::size_t>(wy * g.windows_x() + wx) * n * n;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
          if (label[static_cast<std::size_t>(i)] != label[static_cast<std::size_t>(j)]) {
            mask[base + static_cast<std::size_t>(i) * n + j] = static_cast<T>(kShiftMaskValue);
          }
        }
      }
    }
  }
  return mask;
}

/// Integer (row, col) coordinate of every pixel, row-major: [H*W x 2].
template <class T>
Tensor<T> pixel_grid_points(int height, int width) {
  Tensor<T> pts(Shape{height * width, 2});
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      pts[2 * (static_cast<std::size_t>(y) * width + x)] = static_cast<T>(y);
      pts[2 * (static_cast<std::size_t>(y) * width + x) + 1] = static_cast<T>(x);
    }
  }
  return pts;
}

/// Reference points laid out per window: [nWin x M^2 x 2], the (row, col)
/// pixel coordinate each token is sampled at before offsets are added.
template <class T>
Tensor<T> window_reference_points(const WindowGrid& g) {
  Tape<T> tape;
  const Var<T> pts = tape.constant(pixel_grid_points<T>(g.height, g.width).reshaped(Shape{g.height, g.width, 2}));
  return window_partition(pts, g).value();
}

}  // namespace hyhdr
