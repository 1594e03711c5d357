// Content alignment subnetwork: per-frame shallow encoders, patch
// aggregation (windowed cross-attention from the reference frame), ghost
// attention (per-pixel sigmoid attention) and the gating module.
//
// Parameter names:
//   align.enc{f}.{l}.{w,b}          shallow encoder of frame f (1..3), layer l
//   align.wq / align.wk / align.wv  projections shared by PA and GA
//   align.pa.bias                   [heads x (2M-1)^2] relative position bias
//   align.ga{f}.{w,b}               GA attention conv, f in {1, 3}
//   align.gate{f}.*                 gating module for frame f
//   align.reduce.{w,b}              1x1 conv over concat(F_out1, F_r, F_out3)
#pragma once

#include <array>
#include <string>

#include "hyhdr/attention.hpp"
#include "hyhdr/config.hpp"
#include "hyhdr/ops.hpp"
#include "hyhdr/params.hpp"
#include "hyhdr/window.hpp"

namespace hyhdr {

inline bool uses_pa(AlignmentMode m) { return m == AlignmentMode::kPatchAggregation || m == AlignmentMode::kGated; }
inline bool uses_ga(AlignmentMode m) { return m == AlignmentMode::kGhostAttention || m == AlignmentMode::kGated; }

template <class T>
void init_alignment(ParamSet<T>& ps, const ModelConfig& cfg, SplitMix64& rng) {
  const int c = cfg.channels;
  for (int f = 1; f <= 3; ++f) {
    for (int l = 0; l < cfg.encoder_depth; ++l) {
      init::conv(ps, "align.enc" + std::to_string(f) + "." + std::to_string(l), 3, l == 0 ? 6 : c, c, rng);
    }
  }
  if (cfg.alignment != AlignmentMode::kBaseline) {
    init::linear(ps, "align.wq", c, c, rng, false);
    init::linear(ps, "align.wk", c, c, rng, false);
    init::linear(ps, "align.wv", c, c, rng, false);
  }
  if (uses_pa(cfg.alignment)) {
    const int span = 2 * cfg.window - 1;
    ps.add("align.pa.bias", Tensor<T>(Shape{cfg.pa_heads, span * span}));
  }
  for (int f : {1, 3}) {
    const std::string id = std::to_string(f);
    if (uses_ga(cfg.alignment)) init::conv(ps, "align.ga" + id, 3, 2 * c, c, rng);
    if (cfg.alignment == AlignmentMode::kGated) {
      const std::string g = "align.gate" + id;
      init::conv(ps, g + ".phi", 3, c, c, rng);
      init::conv(ps, g + ".fuse", 3, 2 * c, c, rng);
      init::linear(ps, g + ".mlp1", c, cfg.mlp_ratio * c, rng);
      init::linear(ps, g + ".mlp2", cfg.mlp_ratio * c, c, rng);
      init::layer_norm(ps, g + ".ln", c);
    }
  }
  init::conv(ps, "align.reduce", 1, 3 * c, c, rng);
}

/// F_i = e_i(X_i): the frame's own stack of 3x3 convs (GELU between layers).
template <class T>
Var<T> shallow_encode(Scope<T>& s, const Var<T>& x, int frame, const ModelConfig& cfg) {
  if (frame < 1 || frame > 3) throw ConfigError("shallow_encode: frame index must be 1..3");
  if (x.dims().size() != 3 || x.dims()[2] != 6) throw ShapeError("shallow_encode: expected H x W x 6, got " + shape_str(x.dims()));
  Var<T> h = x;
  for (int l = 0; l < cfg.encoder_depth; ++l) {
    if (l > 0) h = gelu(h);
    const std::string p = "align.enc" + std::to_string(frame) + "." + std::to_string(l);
    h = conv2d(h, s.param(p + ".w"), s.param(p + ".b"));
  }
  return h;
}

namespace detail {

/// One PA pass on projected maps q (reference), k, v (non-reference).
template <class T>
Var<T> patch_aggregate_projected(Scope<T>& s, const Var<T>& q, const Var<T>& k, const Var<T>& v,
                                 const ModelConfig& cfg, bool shifted) {
  const int h = q.dims()[0], w = q.dims()[1];
  const WindowGrid grid = WindowGrid::make(h, w, cfg.window, shifted ? cfg.window / 2 : 0);
  const Var<T> bias = s.param("align.pa.bias");
  const Tensor<T> mask = shift_attention_mask<T>(grid);
  AttentionOptions<T> opt;
  opt.heads = cfg.pa_heads;
  opt.position_bias = &bias;
  opt.window = cfg.window;
  opt.mask = grid.shift ? &mask : nullptr;
  opt.trace = s.trace();
  opt.trace_name = "pa.attn";
  const Var<T> out = windowed_attention(window_partition(q, grid), window_partition(k, grid),
                                        window_partition(v, grid), opt);
  return window_reverse(out, grid, h, w);
}

template <class T>
Var<T> patch_aggregate_schedule(Scope<T>& s, const Var<T>& q, const Var<T>& k, const Var<T>& v,
                                const ModelConfig& cfg) {
  const Var<T> plain = patch_aggregate_projected(s, q, k, v, cfg, false);
  if (!cfg.pa_shifted || cfg.window / 2 == 0) return plain;
  const Var<T> shifted = patch_aggregate_projected(s, q, k, v, cfg, true);
  return scale(add(plain, shifted), T(0.5));
}

template <class T>
Var<T> ghost_attention_projected(Scope<T>& s, const Var<T>& q, const Var<T>& k, const Var<T>& v, int frame) {
  const std::string p = "align.ga" + std::to_string(frame);
  const Var<T> a = sigmoid(conv2d(concat_lastdim<T>({q, k}), s.param(p + ".w"), s.param(p + ".b")));
  if (s.trace()) s.trace()->record("ga.attn", a.value());
  return mul(v, a);
}

template <class T>
void require_feature_pair(const char* op, const Var<T>& a, const Var<T>& b) {
  require_rank(op, a, 3);
  require_same_dims(op, a, b);
}

}  // namespace detail

/// Windowed cross-attention: queries from F_r, keys/values from F_i, with the
/// shared projections and the relative position bias. One pass, either plain
/// or shifted by M/2.
template <class T>
Var<T> patch_aggregate(Scope<T>& s, const Var<T>& fr, const Var<T>& fi, const ModelConfig& cfg, bool shifted) {
  detail::require_feature_pair("patch_aggregate", fr, fi);
  return detail::patch_aggregate_projected(s, linear(fr, s.param("align.wq.w")), linear(fi, s.param("align.wk.w")),
                                           linear(fi, s.param("align.wv.w")), cfg, shifted);
}

/// F_ga = v_i * sigmoid(conv3x3(concat(q, k_i))).
template <class T>
Var<T> ghost_attention(Scope<T>& s, const Var<T>& fr, const Var<T>& fi, int frame, const ModelConfig&) {
  detail::require_feature_pair("ghost_attention", fr, fi);
  if (frame != 1 && frame != 3) throw ConfigError("ghost_attention: frame must be 1 or 3");
  return detail::ghost_attention_projected(s, linear(fr, s.param("align.wq.w")), linear(fi, s.param("align.wk.w")),
                                           linear(fi, s.param("align.wv.w")), frame);
}

/// F_gating = Conv(Concat(F_ga * phi(F_pa), F_pa * phi(F_ga)));
/// F_out = F_gating + LN(MLP(F_gating)).
template <class T>
Var<T> gating_fuse(Scope<T>& s, const Var<T>& fpa, const Var<T>& fga, int frame, const ModelConfig&) {
  detail::require_feature_pair("gating_fuse", fpa, fga);
  const std::string p = "align.gate" + std::to_string(frame);
  const Var<T> phi_w = s.param(p + ".phi.w");
  const Var<T> phi_b = s.param(p + ".phi.b");
  const Var<T> w1 = sigmoid(conv2d(fpa, phi_w, phi_b));  // weight for F_ga
  const Var<T> w2 = sigmoid(conv2d(fga, phi_w, phi_b));  // weight for F_pa
  if (s.trace()) {
    s.trace()->record("gate.w1", w1.value());
    s.trace()->record("gate.w2", w2.value());
  }
  const Var<T> gated = conv2d(concat_lastdim<T>({mul(fga, w1), mul(fpa, w2)}), s.param(p + ".fuse.w"),
                              s.param(p + ".fuse.b"));
  const Var<T> mlp = linear(gelu(linear(gated, s.param(p + ".mlp1.w"), s.param(p + ".mlp1.b"))),
                            s.param(p + ".mlp2.w"), s.param(p + ".mlp2.b"));
  return add(gated, layer_norm(mlp, s.param(p + ".ln.g"), s.param(p + ".ln.b")));
}

/// Full alignment path: encoders, per-frame alignment of frames 1 and 3
/// against the reference, then a 1x1 reduction of concat(F_out1, F_r, F_out3).
template <class T>
Var<T> align_features(Scope<T>& s, const std::array<Var<T>, 3>& inputs, const ModelConfig& cfg) {
  std::array<Var<T>, 3> feats;
  for (int f = 0; f < 3; ++f) feats[static_cast<std::size_t>(f)] = shallow_encode(s, inputs[static_cast<std::size_t>(f)], f + 1, cfg);
  const Var<T>& fr = feats[1];
  std::array<Var<T>, 2> aligned;
  if (cfg.alignment == AlignmentMode::kBaseline) {
    aligned = {feats[0], feats[2]};
  } else {
    const Var<T> q = linear(fr, s.param("align.wq.w"));
    for (int j = 0; j < 2; ++j) {
      const int frame = j == 0 ? 1 : 3;
      const Var<T>& fi = feats[static_cast<std::size_t>(frame - 1)];
      const Var<T> k = linear(fi, s.param("align.wk.w"));
      const Var<T> v = linear(fi, s.param("align.wv.w"));
      Var<T> pa, ga;
      if (uses_pa(cfg.alignment)) pa = detail::patch_aggregate_schedule(s, q, k, v, cfg);
      if (uses_ga(cfg.alignment)) ga = detail::ghost_attention_projected(s, q, k, v, frame);
      switch (cfg.alignment) {
        case AlignmentMode::kPatchAggregation: aligned[static_cast<std::size_t>(j)] = pa; break;
        case AlignmentMode::kGhostAttention: aligned[static_cast<std::size_t>(j)] = ga; break;
        default: aligned[static_cast<std::size_t>(j)] = gating_fuse(s, pa, ga, frame, cfg); break;
      }
    }
  }
  return conv2d(concat_lastdim<T>({aligned[0], fr, aligned[1]}), s.param("align.reduce.w"), s.param("align.reduce.b"));
}

}  // namespace hyhdr
