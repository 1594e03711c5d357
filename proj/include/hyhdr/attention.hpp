// Windowed multi-head attention shared by patch aggregation, the Swin layers
// and the deformable layer.
#pragma once

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "hyhdr/ops.hpp"
#include "hyhdr/params.hpp"
#include "hyhdr/window.hpp"

namespace hyhdr {

namespace detail {

/// Permutation [B x N x (H*D)] -> [(B*H) x N x D], group index = b * H + h.
inline std::shared_ptr<const std::vector<int>> split_heads_index(int b, int n, int heads, int hd) {
  auto idx = std::make_shared<std::vector<int>>();
  idx->reserve(static_cast<std::size_t>(b) * n * heads * hd);
  const int c = heads * hd;
  for (int bi = 0; bi < b; ++bi) {
    for (int h = 0; h < heads; ++h) {
      for (int t = 0; t < n; ++t) {
        for (int d = 0; d < hd; ++d) idx->push_back((bi * n + t) * c + h * hd + d);
      }
    }
  }
  return idx;
}

inline std::shared_ptr<const std::vector<int>> merge_heads_index(int b, int n, int heads, int hd) {
  auto idx = std::make_shared<std::vector<int>>();
  idx->reserve(static_cast<std::size_t>(b) * n * heads * hd);
  for (int bi = 0; bi < b; ++bi) {
    for (int t = 0; t < n; ++t) {
      for (int h = 0; h < heads; ++h) {
        for (int d = 0; d < hd; ++d) idx->push_back(((bi * heads + h) * n + t) * hd + d);
      }
    }
  }
  return idx;
}

}  // namespace detail

template <class T>
Var<T> split_heads(const Var<T>& x, int heads) {
  detail::require_rank("split_heads", x, 3);
  const int b = x.dims()[0], n = x.dims()[1], c = x.dims()[2];
  if (heads <= 0 || c % heads != 0) {
    throw ConfigError("split_heads: " + std::to_string(c) + " channels over " + std::to_string(heads) + " heads");
  }
  return gather(x, detail::split_heads_index(b, n, heads, c / heads), Shape{b * heads, n, c / heads});
}

template <class T>
Var<T> merge_heads(const Var<T>& x, int heads) {
  detail::require_rank("merge_heads", x, 3);
  const int g = x.dims()[0], n = x.dims()[1], hd = x.dims()[2];
  if (heads <= 0 || g % heads != 0) throw ConfigError("merge_heads: group count not divisible by heads");
  return gather(x, detail::merge_heads_index(g / heads, n, heads, hd), Shape{g / heads, n, heads * hd});
}

/// Expands a [heads x (2M-1)^2] bias table to [heads x M^2 x M^2].
template <class T>
Var<T> expand_position_bias(const Var<T>& table, int window) {
  detail::require_rank("expand_position_bias", table, 2);
  const int heads = table.dims()[0];
  const int span = (2 * window - 1) * (2 * window - 1);
  if (table.dims()[1] != span) {
    throw ShapeError("position bias table " + shape_str(table.dims()) + " for window " + std::to_string(window));
  }
  const std::vector<int> rel = relative_position_index(window);
  auto idx = std::make_shared<std::vector<int>>();
  idx->reserve(static_cast<std::size_t>(heads) * rel.size());
  for (int h = 0; h < heads; ++h) {
    for (int r : rel) idx->push_back(h * span + r);
  }
  const int n = window * window;
  return gather(table, std::move(idx), Shape{heads, n, n});
}

template <class T>
struct AttentionOptions {
  int heads = 1;
  const Var<T>* position_bias = nullptr;  ///< [heads x (2M-1)^2] table
  int window = 0;                          ///< needed with position_bias
  const Tensor<T>* mask = nullptr;        ///< [nWin x N x N] additive mask
  Trace<T>* trace = nullptr;
  const char* trace_name = "attn";
};

/// softmax(q k^T / sqrt(d) + B + mask) v per window and head.
/// q: [nWin x N x D], k, v: [nWin x N x D]; returns [nWin x N x D].
template <class T>
Var<T> windowed_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, const AttentionOptions<T>& opt) {
  detail::require_same_dims("windowed_attention q/k", q, k);
  detail::require_same_dims("windowed_attention k/v", k, v);
  const int nwin = q.dims()[0], n = q.dims()[1], c = q.dims()[2];
  const int heads = opt.heads;
  const Var<T> qh = split_heads(q, heads);
  const Var<T> kh = split_heads(k, heads);
  const Var<T> vh = split_heads(v, heads);
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(c / heads));
  Var<T> scores = scale(bmm_nt(qh, kh), inv_sqrt_d);
  if (opt.position_bias) {
    scores = add_tiled(scores, expand_position_bias(*opt.position_bias, opt.window));
  }
  if (opt.mask) {
    if (opt.mask->dims() != Shape{nwin, n, n}) throw ShapeError("attention mask " + shape_str(opt.mask->dims()));
    Tensor<T> full(Shape{nwin * heads, n, n});
    const std::size_t block = static_cast<std::size_t>(n) * n;
    for (int w = 0; w < nwin; ++w) {
      for (int h = 0; h < heads; ++h) {
        std::copy_n(opt.mask->data() + w * block, block, full.data() + (static_cast<std::size_t>(w) * heads + h) * block);
      }
    }
    scores = add(scores, q.tape().constant(std::move(full)));
  }
  const Var<T> attn = softmax_lastdim(scores);
  if (opt.trace) opt.trace->record(opt.trace_name, attn.value());
  return merge_heads(bmm_nn(attn, vh), heads);
}

}  // namespace hyhdr
