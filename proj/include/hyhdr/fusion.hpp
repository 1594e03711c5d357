// Transformer fusion subnetwork: Swin layers (STL), the window-based
// deformable layer (WDTL) with its channel-attention FFN, and the residual
// deformable transformer block (RDTB) that chains them.
//
// Parameter names under fusion.rdtb{r}:
//   .stl{i}.{ln1,q,k,v,bias,proj,ln2,mlp1,mlp2}
//   .wdtl.{wq,wk,wv,off1,off2,ln,mlp1,mlp2,ca1,ca2,conv}
//   .conv
#pragma once

#include <string>

#include "hyhdr/attention.hpp"
#include "hyhdr/config.hpp"
#include "hyhdr/ops.hpp"
#include "hyhdr/params.hpp"
#include "hyhdr/window.hpp"

namespace hyhdr {

inline std::string rdtb_prefix(int r) { return "fusion.rdtb" + std::to_string(r); }
inline std::string stl_prefix(int r, int i) { return rdtb_prefix(r) + ".stl" + std::to_string(i); }
inline std::string wdtl_prefix(int r) { return rdtb_prefix(r) + ".wdtl"; }

template <class T>
void init_stl(ParamSet<T>& ps, const std::string& p, const ModelConfig& cfg, SplitMix64& rng) {
  const int c = cfg.channels;
  const int span = 2 * cfg.window - 1;
  init::layer_norm(ps, p + ".ln1", c);
  init::linear(ps, p + ".q", c, c, rng);
  init::linear(ps, p + ".k", c, c, rng);
  init::linear(ps, p + ".v", c, c, rng);
  ps.add(p + ".bias", Tensor<T>(Shape{cfg.stl_heads, span * span}));
  init::linear(ps, p + ".proj", c, c, rng);
  init::layer_norm(ps, p + ".ln2", c);
  init::linear(ps, p + ".mlp1", c, cfg.mlp_ratio * c, rng);
  init::linear(ps, p + ".mlp2", cfg.mlp_ratio * c, c, rng);
}

template <class T>
void init_wdtl(ParamSet<T>& ps, const std::string& p, const ModelConfig& cfg, SplitMix64& rng) {
  const int c = cfg.channels;
  const int r = c / cfg.ca_reduction;
  init::linear(ps, p + ".wq", c, c, rng, false);
  init::linear(ps, p + ".wk", c, c, rng, false);
  init::linear(ps, p + ".wv", c, c, rng, false);
  ps.add(p + ".off1.w", init::fan_in_uniform<T>(Shape{3, 3, c}, 9, rng));
  ps.add(p + ".off1.b", Tensor<T>(Shape{c}));
  // Small initial offsets: sampling starts near the reference grid.
  ps.add(p + ".off2.w", init::fan_in_uniform<T>(Shape{c, 2}, c, rng, 0.1));
  ps.add(p + ".off2.b", Tensor<T>(Shape{2}));
  init::layer_norm(ps, p + ".ln", c);
  init::linear(ps, p + ".mlp1", c, cfg.mlp_ratio * c, rng);
  init::linear(ps, p + ".mlp2", cfg.mlp_ratio * c, c, rng);
  init::linear(ps, p + ".ca1", c, r, rng);
  init::linear(ps, p + ".ca2", r, c, rng);
  init::conv(ps, p + ".conv", 1, c, c, rng);
}

template <class T>
void init_fusion(ParamSet<T>& ps, const ModelConfig& cfg, SplitMix64& rng) {
  for (int r = 0; r < cfg.rdtb_count; ++r) {
    for (int i = 0; i < cfg.stl_per_rdtb; ++i) init_stl(ps, stl_prefix(r, i), cfg, rng);
    if (cfg.use_wdtl) init_wdtl(ps, wdtl_prefix(r), cfg, rng);
    init::conv(ps, rdtb_prefix(r) + ".conv", 3, cfg.channels, cfg.channels, rng);
  }
}

/// Swin transformer layer: pre-LN windowed multi-head self-attention with a
/// relative position bias (masked when shifted), then a pre-LN GELU MLP; both
/// with residual connections.
template <class T>
Var<T> stl_layer(Scope<T>& s, const Var<T>& x, const std::string& p, const ModelConfig& cfg, int shift) {
  detail::require_rank("stl_layer", x, 3);
  const int h = x.dims()[0], w = x.dims()[1];
  const WindowGrid grid = WindowGrid::make(h, w, cfg.window, shift);
  const Var<T> n1 = layer_norm(x, s.param(p + ".ln1.g"), s.param(p + ".ln1.b"));
  const Var<T> q = linear(n1, s.param(p + ".q.w"), s.param(p + ".q.b"));
  const Var<T> k = linear(n1, s.param(p + ".k.w"), s.param(p + ".k.b"));
  const Var<T> v = linear(n1, s.param(p + ".v.w"), s.param(p + ".v.b"));
  const Var<T> bias = s.param(p + ".bias");
  const Tensor<T> mask = shift_attention_mask<T>(grid);
  AttentionOptions<T> opt;
  opt.heads = cfg.stl_heads;
  opt.position_bias = &bias;
  opt.window = cfg.window;
  opt.mask = shift ? &mask : nullptr;
  opt.trace = s.trace();
  opt.trace_name = "stl.attn";
  const Var<T> attn = window_reverse(
      windowed_attention(window_partition(q, grid), window_partition(k, grid), window_partition(v, grid), opt), grid, h, w);
  const Var<T> x1 = add(x, linear(attn, s.param(p + ".proj.w"), s.param(p + ".proj.b")));
  const Var<T> n2 = layer_norm(x1, s.param(p + ".ln2.g"), s.param(p + ".ln2.b"));
  const Var<T> mlp = linear(gelu(linear(n2, s.param(p + ".mlp1.w"), s.param(p + ".mlp1.b"))), s.param(p + ".mlp2.w"),
                            s.param(p + ".mlp2.b"));
  return add(x1, mlp);
}

/// Per-pixel sampling offsets (row, col) predicted from the query map:
/// depthwise 3x3 conv -> GELU -> 1x1 conv to 2 channels. Returns [H x W x 2].
template <class T>
Var<T> offset_network(Scope<T>& s, const Var<T>& q_map, const std::string& p) {
  const Var<T> h = gelu(depthwise_conv2d(q_map, s.param(p + ".off1.w"), s.param(p + ".off1.b")));
  return linear(h, s.param(p + ".off2.w"), s.param(p + ".off2.b"));
}

/// Deformable window attention: queries from the windowed input; keys and
/// values from the full map bilinearly sampled at reference points + learned
/// offsets (border-clamped). Returns X_tr [H x W x C].
template <class T>
Var<T> wdtl_attention(Scope<T>& s, const Var<T>& x, const std::string& p, const ModelConfig& cfg) {
  detail::require_rank("wdtl_attention", x, 3);
  const int h = x.dims()[0], w = x.dims()[1], c = x.dims()[2];
  const Var<T> q = linear(x, s.param(p + ".wq.w"));
  const Var<T> offsets = offset_network(s, q, p);
  if (s.trace()) s.trace()->record("wdtl.offsets", offsets.value());
  const Var<T> points = add(s.constant(pixel_grid_points<T>(h, w)), reshape(offsets, Shape{h * w, 2}));
  const Var<T> sampled = reshape(bilinear_sample(x, points), Shape{h, w, c});
  const Var<T> k = linear(sampled, s.param(p + ".wk.w"));
  const Var<T> v = linear(sampled, s.param(p + ".wv.w"));
  const WindowGrid grid = WindowGrid::make(h, w, cfg.window, 0);
  AttentionOptions<T> opt;
  opt.heads = cfg.wdtl_heads;
  opt.trace = s.trace();
  opt.trace_name = "wdtl.attn";
  return window_reverse(
      windowed_attention(window_partition(q, grid), window_partition(k, grid), window_partition(v, grid), opt), grid, h, w);
}

/// X' = MLP(LN(X_tr)) + X_tr; X_DT = Conv1x1(GELU(CA(X'))) where CA scales each
/// channel by sigmoid(W2 GELU(W1 avgpool(X'))).
template <class T>
Var<T> ffn_channel_attention(Scope<T>& s, const Var<T>& xtr, const std::string& p, const ModelConfig&) {
  detail::require_rank("ffn_channel_attention", xtr, 3);
  const Var<T> n = layer_norm(xtr, s.param(p + ".ln.g"), s.param(p + ".ln.b"));
  const Var<T> mlp = linear(gelu(linear(n, s.param(p + ".mlp1.w"), s.param(p + ".mlp1.b"))), s.param(p + ".mlp2.w"),
                            s.param(p + ".mlp2.b"));
  const Var<T> xp = add(mlp, xtr);
  const Var<T> pooled = mean_rows(xp);
  const Var<T> scales = sigmoid(linear(gelu(linear(pooled, s.param(p + ".ca1.w"), s.param(p + ".ca1.b"))),
                                       s.param(p + ".ca2.w"), s.param(p + ".ca2.b")));
  if (s.trace()) s.trace()->record("ca.scale", scales.value());
  return conv2d(gelu(mul_tiled(xp, scales)), s.param(p + ".conv.w"), s.param(p + ".conv.b"));
}

template <class T>
Var<T> wdtl_layer(Scope<T>& s, const Var<T>& x, const std::string& p, const ModelConfig& cfg) {
  return ffn_channel_attention(s, wdtl_attention(s, x, p, cfg), p, cfg);
}

/// R_out = Conv(WDTL(STL^N(F0))) + F0, STL shifts alternating 0 and M/2.
template <class T>
Var<T> rdtb_block(Scope<T>& s, const Var<T>& f0, int r, const ModelConfig& cfg) {
  Var<T> h = f0;
  for (int i = 0; i < cfg.stl_per_rdtb; ++i) h = stl_layer(s, h, stl_prefix(r, i), cfg, i % 2 ? cfg.window / 2 : 0);
  if (cfg.use_wdtl) h = wdtl_layer(s, h, wdtl_prefix(r), cfg);
  const std::string p = rdtb_prefix(r);
  return add(conv2d(h, s.param(p + ".conv.w"), s.param(p + ".conv.b")), f0);
}

}  // namespace hyhdr
