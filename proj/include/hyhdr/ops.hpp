// Differentiable operators. Every op takes and returns Var handles; backward
// closures hold shared references to whatever input values they need.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "hyhdr/tape.hpp"
#include "hyhdr/tensor.hpp"

namespace hyhdr {

namespace detail {

template <class T>
constexpr std::size_t kNoNode = Var<T>::kNoNode;

template <class T>
Tape<T>& tape_of(const Var<T>& a) {
  if (!a.valid()) throw ShapeError("operation on an empty Var");
  return a.tape();
}

template <class T, class... Rest>
Tape<T>& tape_of(const Var<T>& a, const Rest&... rest) {
  Tape<T>& t = tape_of(a);
  ((&tape_of(rest) == &t ? void() : throw ShapeError("operands recorded on different tapes")), ...);
  return t;
}

template <class... V>
bool any_grad(const V&... v) {
  return (v.requires_grad() || ...);
}

template <class T>
void require_same_dims(const char* op, const Var<T>& a, const Var<T>& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError(std::string(op) + ": " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
  }
}

template <class T>
void require_rank(const char* op, const Var<T>& a, int rank) {
  if (static_cast<int>(a.dims().size()) != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(a.dims()));
  }
}

/// grad(node) += scale * g, elementwise over the flat storage.
template <class T>
void accumulate(Tape<T>& t, std::size_t node, const Tensor<T>& g, T scale = T(1)) {
  if (node == kNoNode<T>) return;
  Tensor<T>& dst = t.grad(node);
  T* d = dst.data();
  const T* s = g.data();
  const std::size_t n = dst.size();
  if (scale == T(1)) {
    for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
  } else {
    for (std::size_t i = 0; i < n; ++i) d[i] += scale * s[i];
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::tape_of(a, b);
  detail::require_same_dims("add", a, b);
  Tensor<T> out(a.dims());
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] + pb[i];
  return tape.record("add", std::move(out), detail::any_grad(a, b),
                     [ia = a.node(), ib = b.node()](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       detail::accumulate(t, ia, g);
                       detail::accumulate(t, ib, g);
                     });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::tape_of(a, b);
  detail::require_same_dims("sub", a, b);
  Tensor<T> out(a.dims());
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] - pb[i];
  return tape.record("sub", std::move(out), detail::any_grad(a, b),
                     [ia = a.node(), ib = b.node()](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       detail::accumulate(t, ia, g);
                       detail::accumulate(t, ib, g, T(-1));
                     });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::tape_of(a, b);
  detail::require_same_dims("mul", a, b);
  Tensor<T> out(a.dims());
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = pa[i] * pb[i];
  return tape.record(
      "mul", std::move(out), detail::any_grad(a, b),
      [ia = a.node(), ib = b.node(), va = a.shared_value(), vb = b.shared_value()](
          Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
        const std::size_t n = g.size();
        if (ia != detail::kNoNode<T>) {
          T* d = t.grad(ia).data();
          for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * (*vb)[i];
        }
        if (ib != detail::kNoNode<T>) {
          T* d = t.grad(ib).data();
          for (std::size_t i = 0; i < n; ++i) d[i] += g[i] * (*va)[i];
        }
      });
}

/// x * s for a constant scalar s.
template <class T>
Var<T> scale(const Var<T>& x, T s) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * s;
  return tape.record("scale", std::move(out), x.requires_grad(),
                     [ix = x.node(), s](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       detail::accumulate(t, ix, g, s);
                     });
}

namespace detail {

template <class T>
std::size_t tile_count(const char* op, const Var<T>& x, const Var<T>& y) {
  // y repeats over x in blocks of y.size(); the innermost axes must agree.
  if (x.dims().empty() || y.dims().empty() || x.size() % y.size() != 0 ||
      x.dims().back() != y.dims().back()) {
    throw ShapeError(std::string(op) + ": " + shape_str(y.dims()) + " does not tile " +
                     shape_str(x.dims()));
  }
  return x.size() / y.size();
}

}  // namespace detail

/// x + y where y matches the trailing dims of x and is repeated over the rest
/// (bias add, position-bias add).
template <class T>
Var<T> add_tiled(const Var<T>& x, const Var<T>& y) {
  Tape<T>& tape = detail::tape_of(x, y);
  const std::size_t reps = detail::tile_count("add_tiled", x, y);
  const std::size_t m = y.size();
  Tensor<T> out(x.dims());
  const T* px = x.value().data();
  const T* py = y.value().data();
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = px[r * m + j] + py[j];
  }
  return tape.record("add_tiled", std::move(out), detail::any_grad(x, y),
                     [ix = x.node(), iy = y.node(), reps, m](Tape<T>& t, const Tensor<T>&,
                                                             const Tensor<T>& g) {
                       detail::accumulate(t, ix, g);
                       if (iy != detail::kNoNode<T>) {
                         T* d = t.grad(iy).data();
                         for (std::size_t r = 0; r < reps; ++r) {
                           for (std::size_t j = 0; j < m; ++j) d[j] += g[r * m + j];
                         }
                       }
                     });
}

/// x * y with y broadcast over leading dims of x (per-channel scaling).
template <class T>
Var<T> mul_tiled(const Var<T>& x, const Var<T>& y) {
  Tape<T>& tape = detail::tape_of(x, y);
  const std::size_t reps = detail::tile_count("mul_tiled", x, y);
  const std::size_t m = y.size();
  Tensor<T> out(x.dims());
  const T* px = x.value().data();
  const T* py = y.value().data();
  for (std::size_t r = 0; r < reps; ++r) {
    for (std::size_t j = 0; j < m; ++j) out[r * m + j] = px[r * m + j] * py[j];
  }
  return tape.record(
      "mul_tiled", std::move(out), detail::any_grad(x, y),
      [ix = x.node(), iy = y.node(), vx = x.shared_value(), vy = y.shared_value(), reps, m](
          Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
        if (ix != detail::kNoNode<T>) {
          T* d = t.grad(ix).data();
          for (std::size_t r = 0; r < reps; ++r) {
            for (std::size_t j = 0; j < m; ++j) d[r * m + j] += g[r * m + j] * (*vy)[j];
          }
        }
        if (iy != detail::kNoNode<T>) {
          T* d = t.grad(iy).data();
          for (std::size_t r = 0; r < reps; ++r) {
            for (std::size_t j = 0; j < m; ++j) d[j] += g[r * m + j] * (*vx)[r * m + j];
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Pointwise nonlinearities

template <class T>
Var<T> sigmoid(const Var<T>& x) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.value()[i];
    // Branches avoid exp overflow for large |v|.
    out[i] = v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return tape.record("sigmoid", std::move(out), x.requires_grad(),
                     [ix = x.node()](Tape<T>& t, const Tensor<T>& y, const Tensor<T>& g) {
                       T* d = t.grad(ix).data();
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (T(1) - y[i]);
                     });
}

/// Exact (erf-based) GELU.
template <class T>
Var<T> gelu(const Var<T>& x) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out(x.dims());
  const T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T v = x.value()[i];
    out[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  return tape.record("gelu", std::move(out), x.requires_grad(),
                     [ix = x.node(), vx = x.shared_value(), inv_sqrt2](Tape<T>& t, const Tensor<T>&,
                                                                      const Tensor<T>& g) {
                       const T inv_sqrt_2pi = T(0.5) * std::numbers::inv_sqrtpi_v<T> * std::numbers::sqrt2_v<T>;
                       T* d = t.grad(ix).data();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const T v = (*vx)[i];
                         const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
                         const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
                         d[i] += g[i] * (cdf + v * pdf);
                       }
                     });
}

template <class T>
Var<T> abs(const Var<T>& x) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out(x.dims());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::abs(x.value()[i]);
  return tape.record("abs", std::move(out), x.requires_grad(),
                     [ix = x.node(), vx = x.shared_value()](Tape<T>& t, const Tensor<T>&,
                                                            const Tensor<T>& g) {
                       T* d = t.grad(ix).data();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const T v = (*vx)[i];
                         d[i] += v > 0 ? g[i] : (v < 0 ? -g[i] : T(0));
                       }
                     });
}

/// Number of input elements that fell outside [0, 1] and were clamped by mu_law.
inline std::atomic<std::uint64_t>& mu_law_clamp_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

/// log(1 + mu x) / log(1 + mu), with x clamped to [0, 1]; clamped elements get
/// zero gradient and bump mu_law_clamp_counter().
template <class T>
Var<T> mu_law(const Var<T>& x, T mu) {
  Tape<T>& tape = detail::tape_of(x);
  if (!(mu > 0)) throw DomainError("mu_law: mu must be positive");
  const T denom = std::log1p(mu);
  Tensor<T> out(x.dims());
  std::uint64_t clamped = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    T v = x.value()[i];
    if (v < 0 || v > 1) {
      ++clamped;
      v = std::clamp(v, T(0), T(1));
    }
    out[i] = std::log1p(mu * v) / denom;
  }
  if (clamped) mu_law_clamp_counter() += clamped;
  return tape.record("mu_law", std::move(out), x.requires_grad(),
                     [ix = x.node(), vx = x.shared_value(), mu, denom](Tape<T>& t, const Tensor<T>&,
                                                                      const Tensor<T>& g) {
                       T* d = t.grad(ix).data();
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const T v = (*vx)[i];
                         if (v < 0 || v > 1) continue;
                         d[i] += g[i] * mu / ((T(1) + mu * v) * denom);
                       }
                     });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

template <class T>
Var<T> sum_all(const Var<T>& x) {
  Tape<T>& tape = detail::tape_of(x);
  T s = 0;
  for (T v : x.value().values()) s += v;
  return tape.record("sum_all", Tensor<T>::scalar(s), x.requires_grad(),
                     [ix = x.node()](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       Tensor<T>& d = t.grad(ix);
                       for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0];
                     });
}

template <class T>
Var<T> mean_all(const Var<T>& x) {
  Tape<T>& tape = detail::tape_of(x);
  T s = 0;
  for (T v : x.value().values()) s += v;
  const T inv = T(1) / static_cast<T>(x.size());
  return tape.record("mean_all", Tensor<T>::scalar(s * inv), x.requires_grad(),
                     [ix = x.node(), inv](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       Tensor<T>& d = t.grad(ix);
                       for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0] * inv;
                     });
}

/// Mean over every axis but the last: [... x C] -> [C] (global average pool).
template <class T>
Var<T> mean_rows(const Var<T>& x) {
  Tape<T>& tape = detail::tape_of(x);
  const std::size_t c = static_cast<std::size_t>(x.dims().back());
  const std::size_t rows = x.size() / c;
  Tensor<T> out(Shape{static_cast<int>(c)});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < c; ++j) out[j] += x.value()[r * c + j];
  }
  const T inv = T(1) / static_cast<T>(rows);
  for (std::size_t j = 0; j < c; ++j) out[j] *= inv;
  return tape.record("mean_rows", std::move(out), x.requires_grad(),
                     [ix = x.node(), rows, c, inv](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       T* d = t.grad(ix).data();
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t j = 0; j < c; ++j) d[r * c + j] += g[j] * inv;
                       }
                     });
}

template <class T>
Var<T> reshape(const Var<T>& x, Shape dims) {
  Tape<T>& tape = detail::tape_of(x);
  Tensor<T> out = x.value().reshaped(std::move(dims));
  return tape.record("reshape", std::move(out), x.requires_grad(),
                     [ix = x.node()](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       detail::accumulate(t, ix, g);
                     });
}

/// Row gather over the last axis: out row r = x row index[r]. Rows may repeat
/// (gradients scatter-add back).
template <class T>
Var<T> gather_rows(const Var<T>& x, std::shared_ptr<const std::vector<int>> index, Shape out_dims) {
  Tape<T>& tape = detail::tape_of(x);
  const std::size_t row = static_cast<std::size_t>(x.dims().back());
  const std::size_t in_rows = x.size() / row;
  if (out_dims.empty() || static_cast<std::size_t>(out_dims.back()) != row ||
      shape_size(out_dims) != index->size() * row) {
    throw ShapeError("gather_rows: output " + shape_str(out_dims) + " does not hold " +
                     std::to_string(index->size()) + " rows of " + std::to_string(row));
  }
  Tensor<T> out(std::move(out_dims));
  const T* px = x.value().data();
  for (std::size_t r = 0; r < index->size(); ++r) {
    const int src = (*index)[r];
    if (src < 0 || static_cast<std::size_t>(src) >= in_rows) throw ShapeError("gather_rows: index out of range");
    std::copy_n(px + static_cast<std::size_t>(src) * row, row, out.data() + r * row);
  }
  return tape.record("gather_rows", std::move(out), x.requires_grad(),
                     [ix = x.node(), index, row](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       T* d = t.grad(ix).data();
                       for (std::size_t r = 0; r < index->size(); ++r) {
                         T* dst = d + static_cast<std::size_t>((*index)[r]) * row;
                         const T* src = g.data() + r * row;
                         for (std::size_t j = 0; j < row; ++j) dst[j] += src[j];
                       }
                     });
}

/// Elementwise gather: out[i] = x[index[i]].
template <class T>
Var<T> gather(const Var<T>& x, std::shared_ptr<const std::vector<int>> index, Shape out_dims) {
  Tape<T>& tape = detail::tape_of(x);
  if (shape_size(out_dims) != index->size()) {
    throw ShapeError("gather: output " + shape_str(out_dims) + " does not hold " +
                     std::to_string(index->size()) + " elements");
  }
  Tensor<T> out(std::move(out_dims));
  for (std::size_t i = 0; i < index->size(); ++i) {
    const int src = (*index)[i];
    if (src < 0 || static_cast<std::size_t>(src) >= x.size()) throw ShapeError("gather: index out of range");
    out[i] = x.value()[static_cast<std::size_t>(src)];
  }
  return tape.record("gather", std::move(out), x.requires_grad(),
                     [ix = x.node(), index](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       T* d = t.grad(ix).data();
                       for (std::size_t i = 0; i < index->size(); ++i) d[(*index)[i]] += g[i];
                     });
}

/// Concatenation along the last axis; leading dims must agree.
template <class T>
Var<T> concat_lastdim(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_lastdim: no inputs");
  Tape<T>& tape = detail::tape_of(parts.front());
  Shape lead(parts.front().dims().begin(), parts.front().dims().end() - 1);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  bool needs_grad = false;
  for (const Var<T>& p : parts) {
    if (&detail::tape_of(p) != &tape) throw ShapeError("concat_lastdim: operands on different tapes");
    Shape l(p.dims().begin(), p.dims().end() - 1);
    if (l != lead) throw ShapeError("concat_lastdim: leading dims differ: " + shape_str(p.dims()));
    widths.push_back(static_cast<std::size_t>(p.dims().back()));
    total += widths.back();
    needs_grad = needs_grad || p.requires_grad();
  }
  Shape out_dims = lead;
  out_dims.push_back(static_cast<int>(total));
  Tensor<T> out(out_dims);
  const std::size_t rows = out.size() / total;
  std::size_t offset = 0;
  std::vector<std::size_t> nodes;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const T* src = parts[k].value().data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(src + r * widths[k], widths[k], out.data() + r * total + offset);
    }
    offset += widths[k];
    nodes.push_back(parts[k].node());
  }
  return tape.record("concat_lastdim", std::move(out), needs_grad,
                     [nodes, widths, rows, total](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < nodes.size(); ++k) {
                         if (nodes[k] != detail::kNoNode<T>) {
                           T* d = t.grad(nodes[k]).data();
                           for (std::size_t r = 0; r < rows; ++r) {
                             const T* s = g.data() + r * total + off;
                             for (std::size_t j = 0; j < widths[k]; ++j) d[r * widths[k] + j] += s[j];
                           }
                         }
                         off += widths[k];
                       }
                     });
}

/// 2x2 average pooling on H x W x C (odd trailing rows/cols are dropped).
template <class T>
Var<T> avg_pool2(const Var<T>& x) {
  Tape<T>& tape = detail::tape_of(x);
  detail::require_rank("avg_pool2", x, 3);
  const int h = x.dims()[0], w = x.dims()[1], c = x.dims()[2];
  if (h < 2 || w < 2) throw ShapeError("avg_pool2: input smaller than 2x2: " + shape_str(x.dims()));
  const int ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{ho, wo, c});
  const Tensor<T>& in = x.value();
  for (int y = 0; y < ho; ++y) {
    for (int xx = 0; xx < wo; ++xx) {
      for (int k = 0; k < c; ++k) {
        out.at(y, xx, k) = T(0.25) * (in.at(2 * y, 2 * xx, k) + in.at(2 * y, 2 * xx + 1, k) +
                                      in.at(2 * y + 1, 2 * xx, k) + in.at(2 * y + 1, 2 * xx + 1, k));
      }
    }
  }
  return tape.record("avg_pool2", std::move(out), x.requires_grad(),
                     [ix = x.node()](Tape<T>& t, const Tensor<T>& y, const Tensor<T>& g) {
                       Tensor<T>& d = t.grad(ix);
                       for (int r = 0; r < y.dims()[0]; ++r) {
                         for (int q = 0; q < y.dims()[1]; ++q) {
                           for (int k = 0; k < y.dims()[2]; ++k) {
                             const T v = T(0.25) * g.at(r, q, k);
                             d.at(2 * r, 2 * q, k) += v;
                             d.at(2 * r, 2 * q + 1, k) += v;
                             d.at(2 * r + 1, 2 * q, k) += v;
                             d.at(2 * r + 1, 2 * q + 1, k) += v;
                           }
                         }
                       }
                     });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// x[... x Cin] * w[Cin x Cout] (+ b[Cout]).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>* b = nullptr) {
  Tape<T>& tape = detail::tape_of(x, w);
  detail::require_rank("linear weight", w, 2);
  const std::size_t cin = static_cast<std::size_t>(w.dims()[0]);
  const std::size_t cout = static_cast<std::size_t>(w.dims()[1]);
  if (x.dims().empty() || static_cast<std::size_t>(x.dims().back()) != cin) {
    throw ShapeError("linear: input " + shape_str(x.dims()) + " vs weight " + shape_str(w.dims()));
  }
  if (b && (b->dims() != Shape{static_cast<int>(cout)} || &detail::tape_of(*b) != &tape)) {
    throw ShapeError("linear: bias " + shape_str(b->dims()) + " vs weight " + shape_str(w.dims()));
  }
  Shape out_dims = x.dims();
  out_dims.back() = static_cast<int>(cout);
  Tensor<T> out(out_dims);
  const std::size_t rows = x.size() / cin;
  const T* px = x.value().data();
  const T* pw = w.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    T* o = out.data() + r * cout;
    if (b) std::copy_n(b->value().data(), cout, o);
    const T* xr = px + r * cin;
    for (std::size_t i = 0; i < cin; ++i) {
      const T xv = xr[i];
      const T* wr = pw + i * cout;
      for (std::size_t j = 0; j < cout; ++j) o[j] += xv * wr[j];
    }
  }
  const std::size_t ib = b ? b->node() : detail::kNoNode<T>;
  const bool needs = x.requires_grad() || w.requires_grad() || ib != detail::kNoNode<T>;
  return tape.record(
      "linear", std::move(out), needs,
      [ix = x.node(), iw = w.node(), ib, vx = x.shared_value(), vw = w.shared_value(), rows, cin, cout](
          Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
        T* gx = ix != detail::kNoNode<T> ? t.grad(ix).data() : nullptr;
        T* gw = iw != detail::kNoNode<T> ? t.grad(iw).data() : nullptr;
        T* gb = ib != detail::kNoNode<T> ? t.grad(ib).data() : nullptr;
        const T* px = vx->data();
        const T* pw = vw->data();
        for (std::size_t r = 0; r < rows; ++r) {
          const T* gr = g.data() + r * cout;
          if (gb) {
            for (std::size_t j = 0; j < cout; ++j) gb[j] += gr[j];
          }
          for (std::size_t i = 0; i < cin; ++i) {
            if (gx) {
              const T* wr = pw + i * cout;
              T acc = 0;
              for (std::size_t j = 0; j < cout; ++j) acc += gr[j] * wr[j];
              gx[r * cin + i] += acc;
            }
            if (gw) {
              const T xv = px[r * cin + i];
              T* gwr = gw + i * cout;
              for (std::size_t j = 0; j < cout; ++j) gwr[j] += xv * gr[j];
            }
          }
        }
      });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return linear(x, w, &b);
}

/// Batched a * b^T: [G x N x K] . [G x M x K] -> [G x N x M].
template <class T>
Var<T> bmm_nt(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::tape_of(a, b);
  detail::require_rank("bmm_nt", a, 3);
  detail::require_rank("bmm_nt", b, 3);
  const std::size_t g = static_cast<std::size_t>(a.dims()[0]);
  const std::size_t n = static_cast<std::size_t>(a.dims()[1]);
  const std::size_t k = static_cast<std::size_t>(a.dims()[2]);
  const std::size_t m = static_cast<std::size_t>(b.dims()[1]);
  if (static_cast<std::size_t>(b.dims()[0]) != g || static_cast<std::size_t>(b.dims()[2]) != k) {
    throw ShapeError("bmm_nt: " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
  }
  Tensor<T> out(Shape{static_cast<int>(g), static_cast<int>(n), static_cast<int>(m)});
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (std::size_t gi = 0; gi < g; ++gi) {
    for (std::size_t i = 0; i < n; ++i) {
      const T* ar = pa + (gi * n + i) * k;
      T* o = out.data() + (gi * n + i) * m;
      for (std::size_t j = 0; j < m; ++j) {
        const T* br = pb + (gi * m + j) * k;
        T acc = 0;
        for (std::size_t q = 0; q < k; ++q) acc += ar[q] * br[q];
        o[j] = acc;
      }
    }
  }
  return tape.record(
      "bmm_nt", std::move(out), detail::any_grad(a, b),
      [ia = a.node(), ib = b.node(), va = a.shared_value(), vb = b.shared_value(), g, n, m, k](
          Tape<T>& t, const Tensor<T>&, const Tensor<T>& grad) {
        T* ga = ia != detail::kNoNode<T> ? t.grad(ia).data() : nullptr;
        T* gb = ib != detail::kNoNode<T> ? t.grad(ib).data() : nullptr;
        for (std::size_t gi = 0; gi < g; ++gi) {
          for (std::size_t i = 0; i < n; ++i) {
            const T* gr = grad.data() + (gi * n + i) * m;
            const T* ar = va->data() + (gi * n + i) * k;
            for (std::size_t j = 0; j < m; ++j) {
              const T gv = gr[j];
              const T* br = vb->data() + (gi * m + j) * k;
              if (ga) {
                T* gar = ga + (gi * n + i) * k;
                for (std::size_t q = 0; q < k; ++q) gar[q] += gv * br[q];
              }
              if (gb) {
                T* gbr = gb + (gi * m + j) * k;
                for (std::size_t q = 0; q < k; ++q) gbr[q] += gv * ar[q];
              }
            }
          }
        }
      });
}

/// Batched a * b: [G x N x M] . [G x M x D] -> [G x N x D].
template <class T>
Var<T> bmm_nn(const Var<T>& a, const Var<T>& b) {
  Tape<T>& tape = detail::tape_of(a, b);
  detail::require_rank("bmm_nn", a, 3);
  detail::require_rank("bmm_nn", b, 3);
  const std::size_t g = static_cast<std::size_t>(a.dims()[0]);
  const std::size_t n = static_cast<std::size_t>(a.dims()[1]);
  const std::size_t m = static_cast<std::size_t>(a.dims()[2]);
  const std::size_t d = static_cast<std::size_t>(b.dims()[2]);
  if (static_cast<std::size_t>(b.dims()[0]) != g || static_cast<std::size_t>(b.dims()[1]) != m) {
    throw ShapeError("bmm_nn: " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
  }
  Tensor<T> out(Shape{static_cast<int>(g), static_cast<int>(n), static_cast<int>(d)});
  const T* pa = a.value().data();
  const T* pb = b.value().data();
  for (std::size_t gi = 0; gi < g; ++gi) {
    for (std::size_t i = 0; i < n; ++i) {
      const T* ar = pa + (gi * n + i) * m;
      T* o = out.data() + (gi * n + i) * d;
      for (std::size_t j = 0; j < m; ++j) {
        const T av = ar[j];
        const T* br = pb + (gi * m + j) * d;
        for (std::size_t q = 0; q < d; ++q) o[q] += av * br[q];
      }
    }
  }
  return tape.record(
      "bmm_nn", std::move(out), detail::any_grad(a, b),
      [ia = a.node(), ib = b.node(), va = a.shared_value(), vb = b.shared_value(), g, n, m, d](
          Tape<T>& t, const Tensor<T>&, const Tensor<T>& grad) {
        T* ga = ia != detail::kNoNode<T> ? t.grad(ia).data() : nullptr;
        T* gb = ib != detail::kNoNode<T> ? t.grad(ib).data() : nullptr;
        for (std::size_t gi = 0; gi < g; ++gi) {
          for (std::size_t i = 0; i < n; ++i) {
            const T* gr = grad.data() + (gi * n + i) * d;
            const T* ar = va->data() + (gi * n + i) * m;
            for (std::size_t j = 0; j < m; ++j) {
              const T* br = vb->data() + (gi * m + j) * d;
              if (ga) {
                T acc = 0;
                for (std::size_t q = 0; q < d; ++q) acc += gr[q] * br[q];
                ga[(gi * n + i) * m + j] += acc;
              }
              if (gb) {
                const T av = ar[j];
                T* gbr = gb + (gi * m + j) * d;
                for (std::size_t q = 0; q < d; ++q) gbr[q] += av * gr[q];
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Normalisation

/// Softmax over the last axis with max subtraction.
template <class T>
Var<T> softmax_lastdim(const Var<T>& x) {
  Tape<T>& tape = detail::tape_of(x);
  if (x.dims().empty()) throw ShapeError("softmax_lastdim: scalar input");
  const std::size_t n = static_cast<std::size_t>(x.dims().back());
  const std::size_t rows = x.size() / n;
  Tensor<T> out(x.dims());
  const T* px = x.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * n;
    T* o = out.data() + r * n;
    const T mx = *std::max_element(xr, xr + n);
    T s = 0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(xr[j] - mx);
      s += o[j];
    }
    const T inv = T(1) / s;
    for (std::size_t j = 0; j < n; ++j) o[j] *= inv;
  }
  return tape.record("softmax_lastdim", std::move(out), x.requires_grad(),
                     [ix = x.node(), rows, n](Tape<T>& t, const Tensor<T>& y, const Tensor<T>& g) {
                       T* d = t.grad(ix).data();
                       for (std::size_t r = 0; r < rows; ++r) {
                         const T* yr = y.data() + r * n;
                         const T* gr = g.data() + r * n;
                         T dot = 0;
                         for (std::size_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                         for (std::size_t j = 0; j < n; ++j) d[r * n + j] += yr[j] * (gr[j] - dot);
                       }
                     });
}

/// Layer norm over the last axis (biased variance), then gamma * x_hat + beta.
template <class T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5)) {
  Tape<T>& tape = detail::tape_of(x, gamma, beta);
  if (!(eps > 0)) throw ConfigError("layer_norm: eps must be positive");
  if (x.dims().empty()) throw ShapeError("layer_norm: scalar input");
  const std::size_t c = static_cast<std::size_t>(x.dims().back());
  const Shape cdims{static_cast<int>(c)};
  if (gamma.dims() != cdims || beta.dims() != cdims) {
    throw ShapeError("layer_norm: affine " + shape_str(gamma.dims()) + " vs input " + shape_str(x.dims()));
  }
  const std::size_t rows = x.size() / c;
  Tensor<T> out(x.dims());
  const T* px = x.value().data();
  const T* pg = gamma.value().data();
  const T* pb = beta.value().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = px + r * c;
    T mean = 0;
    for (std::size_t j = 0; j < c; ++j) mean += xr[j];
    mean /= static_cast<T>(c);
    T var = 0;
    for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<T>(c);
    const T rstd = T(1) / std::sqrt(var + eps);
    T* o = out.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) o[j] = pg[j] * ((xr[j] - mean) * rstd) + pb[j];
  }
  return tape.record(
      "layer_norm", std::move(out), detail::any_grad(x, gamma, beta),
      [ix = x.node(), ig = gamma.node(), ibt = beta.node(), vx = x.shared_value(),
       vg = gamma.shared_value(), rows, c, eps](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
        T* gx = ix != detail::kNoNode<T> ? t.grad(ix).data() : nullptr;
        T* gg = ig != detail::kNoNode<T> ? t.grad(ig).data() : nullptr;
        T* gb = ibt != detail::kNoNode<T> ? t.grad(ibt).data() : nullptr;
        std::vector<T> xhat(c);
        for (std::size_t r = 0; r < rows; ++r) {
          const T* xr = vx->data() + r * c;
          const T* gr = g.data() + r * c;
          T mean = 0;
          for (std::size_t j = 0; j < c; ++j) mean += xr[j];
          mean /= static_cast<T>(c);
          T var = 0;
          for (std::size_t j = 0; j < c; ++j) var += (xr[j] - mean) * (xr[j] - mean);
          var /= static_cast<T>(c);
          const T rstd = T(1) / std::sqrt(var + eps);
          T mean_gh = 0, mean_ghx = 0;
          for (std::size_t j = 0; j < c; ++j) {
            xhat[j] = (xr[j] - mean) * rstd;
            const T gh = gr[j] * (*vg)[j];
            mean_gh += gh;
            mean_ghx += gh * xhat[j];
            if (gg) gg[j] += gr[j] * xhat[j];
            if (gb) gb[j] += gr[j];
          }
          if (!gx) continue;
          mean_gh /= static_cast<T>(c);
          mean_ghx /= static_cast<T>(c);
          for (std::size_t j = 0; j < c; ++j) {
            gx[r * c + j] += rstd * (gr[j] * (*vg)[j] - mean_gh - xhat[j] * mean_ghx);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Spatial ops on H x W x C feature maps

/// Cross-correlation with zero padding. weight is k x k x Cin x Cout, bias Cout.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b, int stride = 1, int padding = -1) {
  Tape<T>& tape = detail::tape_of(x, w, b);
  detail::require_rank("conv2d input", x, 3);
  detail::require_rank("conv2d weight", w, 4);
  const int h = x.dims()[0], wd = x.dims()[1], cin = x.dims()[2];
  const int k = w.dims()[0];
  const int cout = w.dims()[3];
  if (w.dims()[1] != k || k % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd, got " + shape_str(w.dims()));
  if (w.dims()[2] != cin) throw ShapeError("conv2d: input " + shape_str(x.dims()) + " vs weight " + shape_str(w.dims()));
  if (b.dims() != Shape{cout}) throw ShapeError("conv2d: bias " + shape_str(b.dims()) + " vs weight " + shape_str(w.dims()));
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) padding = (k - 1) / 2;
  const int ho = (h + 2 * padding - k) / stride + 1;
  const int wo = (wd + 2 * padding - k) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: kernel larger than padded input " + shape_str(x.dims()));

  Tensor<T> out(Shape{ho, wo, cout});
  const T* px = x.value().data();
  const T* pw = w.value().data();
  const T* pb = b.value().data();
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      T* o = out.data() + (static_cast<std::size_t>(oy) * wo + ox) * cout;
      std::copy_n(pb, cout, o);
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - padding + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * stride - padding + kx;
          if (ix < 0 || ix >= wd) continue;
          const T* xin = px + (static_cast<std::size_t>(iy) * wd + ix) * cin;
          const T* wk = pw + static_cast<std::size_t>(ky * k + kx) * cin * cout;
          for (int ci = 0; ci < cin; ++ci) {
            const T xv = xin[ci];
            const T* wr = wk + static_cast<std::size_t>(ci) * cout;
            for (int co = 0; co < cout; ++co) o[co] += xv * wr[co];
          }
        }
      }
    }
  }
  return tape.record(
      "conv2d", std::move(out), detail::any_grad(x, w, b),
      [ix_ = x.node(), iw = w.node(), ib = b.node(), vx = x.shared_value(), vw = w.shared_value(),
       h, wd, cin, cout, k, stride, padding, ho, wo](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
        T* gx = ix_ != detail::kNoNode<T> ? t.grad(ix_).data() : nullptr;
        T* gw = iw != detail::kNoNode<T> ? t.grad(iw).data() : nullptr;
        T* gb = ib != detail::kNoNode<T> ? t.grad(ib).data() : nullptr;
        const T* px = vx->data();
        const T* pw = vw->data();
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            const T* gr = g.data() + (static_cast<std::size_t>(oy) * wo + ox) * cout;
            if (gb) {
              for (int co = 0; co < cout; ++co) gb[co] += gr[co];
            }
            for (int ky = 0; ky < k; ++ky) {
              const int iy = oy * stride - padding + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ixx = ox * stride - padding + kx;
                if (ixx < 0 || ixx >= wd) continue;
                const std::size_t xoff = (static_cast<std::size_t>(iy) * wd + ixx) * cin;
                const std::size_t woff = static_cast<std::size_t>(ky * k + kx) * cin * cout;
                for (int ci = 0; ci < cin; ++ci) {
                  const T* wr = pw + woff + static_cast<std::size_t>(ci) * cout;
                  if (gx) {
                    T acc = 0;
                    for (int co = 0; co < cout; ++co) acc += gr[co] * wr[co];
                    gx[xoff + ci] += acc;
                  }
                  if (gw) {
                    const T xv = px[xoff + ci];
                    T* gwr = gw + woff + static_cast<std::size_t>(ci) * cout;
                    for (int co = 0; co < cout; ++co) gwr[co] += xv * gr[co];
                  }
                }
              }
            }
          }
        }
      });
}

/// Depthwise (per-channel) k x k convolution, stride 1, shape preserving.
/// weight is k x k x C, bias C.
template <class T>
Var<T> depthwise_conv2d(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  Tape<T>& tape = detail::tape_of(x, w, b);
  detail::require_rank("depthwise_conv2d input", x, 3);
  detail::require_rank("depthwise_conv2d weight", w, 3);
  const int h = x.dims()[0], wd = x.dims()[1], c = x.dims()[2];
  const int k = w.dims()[0];
  if (w.dims()[1] != k || k % 2 == 0 || w.dims()[2] != c || b.dims() != Shape{c}) {
    throw ShapeError("depthwise_conv2d: input " + shape_str(x.dims()) + " weight " + shape_str(w.dims()) +
                     " bias " + shape_str(b.dims()));
  }
  const int p = (k - 1) / 2;
  Tensor<T> out(x.dims());
  const Tensor<T>& in = x.value();
  const Tensor<T>& wt = w.value();
  for (int y = 0; y < h; ++y) {
    for (int xx = 0; xx < wd; ++xx) {
      T* o = &out.at(y, xx, 0);
      std::copy_n(b.value().data(), c, o);
      for (int ky = 0; ky < k; ++ky) {
        const int iy = y - p + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = xx - p + kx;
          if (ix < 0 || ix >= wd) continue;
          const T* xin = &in.at(iy, ix, 0);
          const T* wr = &wt.at(ky, kx, 0);
          for (int ch = 0; ch < c; ++ch) o[ch] += xin[ch] * wr[ch];
        }
      }
    }
  }
  return tape.record(
      "depthwise_conv2d", std::move(out), detail::any_grad(x, w, b),
      [ix_ = x.node(), iw = w.node(), ib = b.node(), vx = x.shared_value(), vw = w.shared_value(), h, wd, c,
       k, p](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
        Tensor<T>* gx = ix_ != detail::kNoNode<T> ? &t.grad(ix_) : nullptr;
        Tensor<T>* gw = iw != detail::kNoNode<T> ? &t.grad(iw) : nullptr;
        Tensor<T>* gb = ib != detail::kNoNode<T> ? &t.grad(ib) : nullptr;
        for (int y = 0; y < h; ++y) {
          for (int xx = 0; xx < wd; ++xx) {
            const T* gr = &g.at(y, xx, 0);
            if (gb) {
              for (int ch = 0; ch < c; ++ch) (*gb)[ch] += gr[ch];
            }
            for (int ky = 0; ky < k; ++ky) {
              const int iy = y - p + ky;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int ix = xx - p + kx;
                if (ix < 0 || ix >= wd) continue;
                for (int ch = 0; ch < c; ++ch) {
                  if (gx) gx->at(iy, ix, ch) += gr[ch] * vw->at(ky, kx, ch);
                  if (gw) gw->at(ky, kx, ch) += gr[ch] * vx->at(iy, ix, ch);
                }
              }
            }
          }
        }
      });
}

/// Bilinear interpolation of x[H x W x C] at continuous (row, col) points[P x 2].
/// Coordinates are clamped to the image; clamped coordinates get zero gradient.
template <class T>
Var<T> bilinear_sample(const Var<T>& x, const Var<T>& points) {
  Tape<T>& tape = detail::tape_of(x, points);
  detail::require_rank("bilinear_sample input", x, 3);
  detail::require_rank("bilinear_sample points", points, 2);
  if (points.dims()[1] != 2) throw ShapeError("bilinear_sample: points must be P x 2, got " + shape_str(points.dims()));
  const int h = x.dims()[0], w = x.dims()[1], c = x.dims()[2];
  const int np = points.dims()[0];
  Tensor<T> out(Shape{np, c});
  const Tensor<T>& in = x.value();
  const Tensor<T>& pts = points.value();

  struct Corner {
    int y0, y1, x0, x1;
    T fy, fx;
    bool in_y, in_x;
  };
  auto locate = [h, w](T py, T px) {
    Corner q{};
    q.in_y = py >= 0 && py <= T(h - 1);
    q.in_x = px >= 0 && px <= T(w - 1);
    const T cy = std::clamp(py, T(0), T(h - 1));
    const T cx = std::clamp(px, T(0), T(w - 1));
    q.y0 = static_cast<int>(std::floor(cy));
    q.x0 = static_cast<int>(std::floor(cx));
    q.y1 = std::min(q.y0 + 1, h - 1);
    q.x1 = std::min(q.x0 + 1, w - 1);
    q.fy = cy - T(q.y0);
    q.fx = cx - T(q.x0);
    return q;
  };

  for (int p = 0; p < np; ++p) {
    const Corner q = locate(pts[2 * p], pts[2 * p + 1]);
    const T w00 = (T(1) - q.fy) * (T(1) - q.fx);
    const T w01 = (T(1) - q.fy) * q.fx;
    const T w10 = q.fy * (T(1) - q.fx);
    const T w11 = q.fy * q.fx;
    for (int ch = 0; ch < c; ++ch) {
      out[static_cast<std::size_t>(p) * c + ch] = w00 * in.at(q.y0, q.x0, ch) + w01 * in.at(q.y0, q.x1, ch) +
                                                 w10 * in.at(q.y1, q.x0, ch) + w11 * in.at(q.y1, q.x1, ch);
    }
  }
  return tape.record(
      "bilinear_sample", std::move(out), detail::any_grad(x, points),
      [ix = x.node(), ip = points.node(), vx = x.shared_value(), vp = points.shared_value(), np, c,
       locate](Tape<T>& t, const Tensor<T>&, const Tensor<T>& g) {
        Tensor<T>* gx = ix != detail::kNoNode<T> ? &t.grad(ix) : nullptr;
        T* gp = ip != detail::kNoNode<T> ? t.grad(ip).data() : nullptr;
        const Tensor<T>& in = *vx;
        for (int p = 0; p < np; ++p) {
          const Corner q = locate((*vp)[2 * p], (*vp)[2 * p + 1]);
          const T* gr = g.data() + static_cast<std::size_t>(p) * c;
          if (gx) {
            const T w00 = (T(1) - q.fy) * (T(1) - q.fx);
            const T w01 = (T(1) - q.fy) * q.fx;
            const T w10 = q.fy * (T(1) - q.fx);
            const T w11 = q.fy * q.fx;
            for (int ch = 0; ch < c; ++ch) {
              gx->at(q.y0, q.x0, ch) += gr[ch] * w00;
              gx->at(q.y0, q.x1, ch) += gr[ch] * w01;
              gx->at(q.y1, q.x0, ch) += gr[ch] * w10;
              gx->at(q.y1, q.x1, ch) += gr[ch] * w11;
            }
          }
          if (gp) {
            T dy = 0, dx = 0;
            for (int ch = 0; ch < c; ++ch) {
              const T a = in.at(q.y0, q.x0, ch), b = in.at(q.y0, q.x1, ch);
              const T cc = in.at(q.y1, q.x0, ch), d = in.at(q.y1, q.x1, ch);
              dy += gr[ch] * ((T(1) - q.fx) * (cc - a) + q.fx * (d - b));
              dx += gr[ch] * ((T(1) - q.fy) * (b - a) + q.fy * (d - cc));
            }
            if (q.in_y) gp[2 * p] += dy;
            if (q.in_x) gp[2 * p + 1] += dx;
          }
        }
      });
}

}  // namespace hyhdr
