#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace hyhdr;
using hyhdr::testing::random_tensor;
using hyhdr::testing::tiny_config;

namespace {

ParamSet<double> alignment_params(const ModelConfig& cfg, std::uint64_t seed, bool random_bias = true) {
  ParamSet<double> ps;
  SplitMix64 rng(seed);
  init_alignment(ps, cfg, rng);
  if (random_bias && ps.contains("align.pa.bias")) ps.at("align.pa.bias") = random_tensor<double>(ps.at("align.pa.bias").dims(), rng);
  return ps;
}

}  // namespace

TEST(Alignment, ShallowEncoderShapeAndZeroInput) {
  const auto cfg = tiny_config();
  auto ps = alignment_params(cfg, 1);
  Tape<double> tape;
  Scope<double> s(tape, ps);
  const auto f = shallow_encode(s, s.constant(Tensor<double>(Shape{6, 5, 6})), 2, cfg);
  EXPECT_EQ(f.dims(), (Shape{6, 5, cfg.channels}));
  EXPECT_EQ(f.value().max_abs(), 0.0);  // zero input, zero bias
  EXPECT_THROW(shallow_encode(s, s.constant(Tensor<double>(Shape{6, 5, 4})), 2, cfg), ShapeError);
}

TEST(Alignment, EncodersAreIndependent) {
  const auto cfg = tiny_config();
  auto ps = alignment_params(cfg, 2);
  SplitMix64 rng(3);
  const auto x = random_tensor<double>(Shape{4, 4, 6}, rng);
  auto run = [&](int frame) {
    Tape<double> tape;
    Scope<double> s(tape, ps);
    return shallow_encode(s, s.constant(x), frame, cfg).value();
  };
  const auto f1 = run(1), f2 = run(2), f3 = run(3);
  ps.at("align.enc1.0.w")[5] += 0.5;
  EXPECT_NE(run(1), f1);
  EXPECT_EQ(run(2), f2);
  EXPECT_EQ(run(3), f3);
}

TEST(Alignment, PatchAggregationConstantFrameAbsorbedProperty) {
  SplitMix64 rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig cfg = tiny_config();
    cfg.window = 2 + static_cast<int>(rng.below(3));
    auto ps = alignment_params(cfg, rng.next());
    const int h = 3 + static_cast<int>(rng.below(8)), w = 3 + static_cast<int>(rng.below(8));
    const double c = rng.uniform(-2, 2);
    const auto fr = random_tensor<double>(Shape{h, w, cfg.channels}, rng, -3, 3);
    Tensor<double> fi(Shape{h, w, cfg.channels});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int k = 0; k < cfg.channels; ++k) fi.at(y, x, k) = c * (k + 1);  // spatially constant
    // Feed v = F_i directly (identity value projection) so the constant is observable.
    ps.at("align.wv.w") = Tensor<double>(Shape{cfg.channels, cfg.channels});
    for (int k = 0; k < cfg.channels; ++k) ps.at("align.wv.w")[static_cast<std::size_t>(k * cfg.channels + k)] = 1.0;
    const bool shifted = rng.below(2);
    Tape<double> tape;
    Scope<double> s(tape, ps);
    const auto out = patch_aggregate(s, s.constant(fr), s.constant(fi), cfg, shifted).value();
    ASSERT_LT(max_abs_diff(out, fi), 1e-5) << "trial " << trial;
  }
}

TEST(Alignment, PatchAggregationBruteForceSingleWindow) {
  // M=2, C=d=1, identity projections, B=0: one 2x2 window, 4x4 similarity map.
  ModelConfig cfg = tiny_config(AlignmentMode::kPatchAggregation);
  cfg.channels = 1;
  cfg.window = 2;
  cfg.stl_heads = cfg.wdtl_heads = cfg.pa_heads = 1;
  cfg.ca_reduction = 1;
  ParamSet<double> ps;
  SplitMix64 rng(5);
  init_alignment(ps, cfg, rng);
  for (const char* n : {"align.wq.w", "align.wk.w", "align.wv.w"}) ps.at(n) = Tensor<double>(Shape{1, 1}, 1.0);
  const std::vector<double> r = {0.3, -0.7, 1.1, 0.2}, f = {0.9, -0.4, 0.5, 2.0};
  Tape<double> tape;
  Scope<double> s(tape, ps);
  const auto out =
      patch_aggregate(s, s.constant(Tensor<double>(Shape{2, 2, 1}, r)), s.constant(Tensor<double>(Shape{2, 2, 1}, f)), cfg, false)
          .value();
  for (int i = 0; i < 4; ++i) {
    double z = 0, acc = 0;
    for (int j = 0; j < 4; ++j) {
      const double e = std::exp(r[static_cast<std::size_t>(i)] * f[static_cast<std::size_t>(j)]);
      z += e;
      acc += e * f[static_cast<std::size_t>(j)];
    }
    EXPECT_NEAR(out[static_cast<std::size_t>(i)], acc / z, 1e-14);
  }
}

TEST(Alignment, PatchAggregationShapeAndRowSums) {
  ModelConfig cfg = tiny_config();
  cfg.channels = 16;
  cfg.window = 8;
  auto ps = alignment_params(cfg, 6);
  SplitMix64 rng(7);
  Tape<double> tape;
  Trace<double> trace;
  Scope<double> s(tape, ps, true, &trace);
  const auto out = patch_aggregate(s, s.constant(random_tensor<double>(Shape{16, 16, 16}, rng)),
                                   s.constant(random_tensor<double>(Shape{16, 16, 16}, rng)), cfg, true);
  EXPECT_EQ(out.dims(), (Shape{16, 16, 16}));
  const auto maps = trace.find_all("pa.attn");
  ASSERT_EQ(maps.size(), 1u);
  const auto& a = *maps[0];
  const int n = 64;
  for (std::size_t r = 0; r < a.size() / n; ++r) {
    double sum = 0;
    for (int j = 0; j < n; ++j) sum += a[r * n + static_cast<std::size_t>(j)];
    ASSERT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Alignment, ShiftedAndPlainAgreeOnConstantMaps) {
  const auto cfg = tiny_config();
  auto ps = alignment_params(cfg, 8, false);
  Tensor<double> fr(Shape{8, 8, cfg.channels}), fi(Shape{8, 8, cfg.channels});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int k = 0; k < cfg.channels; ++k) {
        fr.at(y, x, k) = 0.1 * k - 0.3;
        fi.at(y, x, k) = 0.05 * k * k - 0.2;
      }
  Tape<double> tape;
  Scope<double> s(tape, ps);
  const auto a = patch_aggregate(s, s.constant(fr), s.constant(fi), cfg, false).value();
  const auto b = patch_aggregate(s, s.constant(fr), s.constant(fi), cfg, true).value();
  EXPECT_LT(max_abs_diff(a, b), 1e-12);
}

TEST(Alignment, GhostAttentionProperties) {
  const auto cfg = tiny_config();
  SplitMix64 rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    auto ps = alignment_params(cfg, rng.next());
    const int h = 2 + static_cast<int>(rng.below(6)), w = 2 + static_cast<int>(rng.below(6));
    Tape<double> tape;
    Trace<double> trace;
    Scope<double> s(tape, ps, false, &trace);
    const auto fi = random_tensor<double>(Shape{h, w, cfg.channels}, rng, -5, 5);
    const auto out = ghost_attention(s, s.constant(random_tensor<double>(Shape{h, w, cfg.channels}, rng, -5, 5)),
                                     s.constant(fi), 1 + 2 * static_cast<int>(rng.below(2)), cfg);
    const auto& a = *trace.find_all("ga.attn").at(0);
    for (double v : a.values()) {
      ASSERT_GT(v, 0.0);
      ASSERT_LT(v, 1.0);
    }
    ASSERT_EQ(out.dims(), fi.dims());
  }
}

TEST(Alignment, GhostAttentionZeroConvGivesHalfValue) {
  const auto cfg = tiny_config();
  auto ps = alignment_params(cfg, 10);
  ps.at("align.ga3.w").fill(0);
  ps.at("align.ga3.b").fill(0);
  SplitMix64 rng(11);
  const auto fr = random_tensor<double>(Shape{5, 5, cfg.channels}, rng);
  const auto fi = random_tensor<double>(Shape{5, 5, cfg.channels}, rng);
  Tape<double> tape;
  Scope<double> s(tape, ps);
  const auto out = ghost_attention(s, s.constant(fr), s.constant(fi), 3, cfg).value();
  const auto v = linear(s.constant(fi), s.param("align.wv.w")).value();
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_DOUBLE_EQ(out[i], 0.5 * v[i]);
  // v = 0 -> output 0 regardless of the attention map
  ps.at("align.wv.w").fill(0);
  Tape<double> t2;
  Scope<double> s2(t2, ps);
  EXPECT_EQ(ghost_attention(s2, s2.constant(fr), s2.constant(fi), 1, cfg).value().max_abs(), 0.0);
}

TEST(Alignment, ProjectionsAreSharedBetweenBranches) {
  const auto cfg = tiny_config();
  auto ps = alignment_params(cfg, 12);
  SplitMix64 rng(13);
  const auto fr = random_tensor<double>(Shape{8, 8, cfg.channels}, rng);
  const auto fi = random_tensor<double>(Shape{8, 8, cfg.channels}, rng);
  auto run = [&] {
    Tape<double> tape;
    Scope<double> s(tape, ps);
    return std::make_pair(patch_aggregate(s, s.constant(fr), s.constant(fi), cfg, false).value(),
                          ghost_attention(s, s.constant(fr), s.constant(fi), 1, cfg).value());
  };
  const auto [pa0, ga0] = run();
  ps.at("align.wq.w")[3] += 0.25;
  const auto [pa1, ga1] = run();
  EXPECT_GT(max_abs_diff(pa0, pa1), 1e-9);
  EXPECT_GT(max_abs_diff(ga0, ga1), 1e-9);
  EXPECT_FALSE(ps.contains("align.pa.wq.w"));
  EXPECT_FALSE(ps.contains("align.ga1.wq.w"));
}

TEST(Alignment, GatingZeroPhiGivesHalfGates) {
  const auto cfg = tiny_config();
  auto ps = alignment_params(cfg, 14);
  ps.at("align.gate1.phi.w").fill(0);
  ps.at("align.gate1.phi.b").fill(0);
  ps.at("align.gate1.mlp2.w").fill(0);
  SplitMix64 rng(15);
  const auto fpa = random_tensor<double>(Shape{6, 6, cfg.channels}, rng);
  const auto fga = random_tensor<double>(Shape{6, 6, cfg.channels}, rng);
  Tape<double> tape;
  Trace<double> trace;
  Scope<double> s(tape, ps, true, &trace);
  const auto out = gating_fuse(s, s.constant(fpa), s.constant(fga), 1, cfg).value();
  for (double v : trace.find_all("gate.w1").at(0)->values()) EXPECT_EQ(v, 0.5);
  // MLP output zero and LN beta zero -> F_out = F_gating = Conv(Concat(0.5 F_ga, 0.5 F_pa)).
  Tensor<double> cat(Shape{6, 6, 2 * cfg.channels});
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      for (int k = 0; k < cfg.channels; ++k) {
        cat.at(y, x, k) = 0.5 * fga.at(y, x, k);
        cat.at(y, x, cfg.channels + k) = 0.5 * fpa.at(y, x, k);
      }
  const auto expect = hyhdr::testing::ref_conv2d(cat, ps.at("align.gate1.fuse.w"), ps.at("align.gate1.fuse.b"));
  EXPECT_LT(max_abs_diff(out, expect), 1e-12);
}

TEST(Alignment, GatingResidualIdentityProperty) {
  const auto cfg = tiny_config();
  SplitMix64 rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    auto ps = alignment_params(cfg, rng.next());
    ps.at("align.gate3.mlp1.w").fill(0);
    ps.at("align.gate3.mlp2.w").fill(0);
    ps.at("align.gate3.ln.g") = random_tensor<double>(Shape{cfg.channels}, rng);
    const int h = 2 + static_cast<int>(rng.below(5)), w = 2 + static_cast<int>(rng.below(5));
    const auto fpa = random_tensor<double>(Shape{h, w, cfg.channels}, rng);
    const auto fga = random_tensor<double>(Shape{h, w, cfg.channels}, rng);
    Tape<double> tape;
    Scope<double> s(tape, ps);
    const auto out = gating_fuse(s, s.constant(fpa), s.constant(fga), 3, cfg).value();
    // F_gating recomputed from its definition.
    const auto phi = [&](const Tensor<double>& x) {
      auto z = hyhdr::testing::ref_conv2d(x, ps.at("align.gate3.phi.w"), ps.at("align.gate3.phi.b"));
      for (auto& v : z.values()) v = 1.0 / (1.0 + std::exp(-v));
      return z;
    };
    const auto w1 = phi(fpa), w2 = phi(fga);
    Tensor<double> cat(Shape{h, w, 2 * cfg.channels});
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int k = 0; k < cfg.channels; ++k) {
          cat.at(y, x, k) = fga.at(y, x, k) * w1.at(y, x, k);
          cat.at(y, x, cfg.channels + k) = fpa.at(y, x, k) * w2.at(y, x, k);
        }
    const auto gating = hyhdr::testing::ref_conv2d(cat, ps.at("align.gate3.fuse.w"), ps.at("align.gate3.fuse.b"));
    ASSERT_LT(max_abs_diff(out, gating), 1e-12) << "trial " << trial;
  }
}

TEST(Alignment, GatingIsNotSymmetric) {
  const auto cfg = tiny_config();
  auto ps = alignment_params(cfg, 0);
  SplitMix64 rng(17);
  const auto a = random_tensor<double>(Shape{5, 5, cfg.channels}, rng);
  const auto b = random_tensor<double>(Shape{5, 5, cfg.channels}, rng);
  Tape<double> tape;
  Scope<double> s(tape, ps);
  const auto ab = gating_fuse(s, s.constant(a), s.constant(b), 1, cfg).value();
  const auto ba = gating_fuse(s, s.constant(b), s.constant(a), 1, cfg).value();
  EXPECT_GT(max_abs_diff(ab, ba), 1e-6);
  EXPECT_THROW(gating_fuse(s, s.constant(a), s.constant(Tensor<double>(Shape{4, 5, cfg.channels})), 1, cfg), ShapeError);
}

TEST(Alignment, ModesRegisterOnlyTheirParameters) {
  for (auto mode : {AlignmentMode::kBaseline, AlignmentMode::kGhostAttention, AlignmentMode::kPatchAggregation,
                    AlignmentMode::kGated}) {
    const auto cfg = tiny_config(mode);
    auto ps = alignment_params(cfg, 18);
    EXPECT_EQ(ps.contains("align.pa.bias"), uses_pa(mode));
    EXPECT_EQ(ps.contains("align.ga1.w"), uses_ga(mode));
    EXPECT_EQ(ps.contains("align.gate1.phi.w"), mode == AlignmentMode::kGated);
    SplitMix64 rng(19);
    std::array<Var<double>, 3> in;
    Tape<double> tape;
    Scope<double> s(tape, ps);
    for (auto& v : in) v = s.constant(random_tensor<double>(Shape{8, 8, 6}, rng));
    const auto out = align_features(s, in, cfg);
    EXPECT_EQ(out.dims(), (Shape{8, 8, cfg.channels}));
    for (const auto& n : ps.names()) EXPECT_TRUE(s.used(n)) << to_string(mode) << " leaves " << n << " unused";
  }
}

TEST(Alignment, GradFullAlignmentPath) {
  auto cfg = tiny_config();
  auto ps = alignment_params(cfg, 20);
  SplitMix64 rng(21);
  std::array<Tensor<double>, 3> in;
  for (auto& t : in) t = random_tensor<double>(Shape{6, 6, 6}, rng);
  GradCheckOptions opt;
  opt.samples_per_tensor = 12;
  const auto rep = grad_check(
      [&](Scope<double>& s) {
        std::array<Var<double>, 3> v;
        for (std::size_t i = 0; i < 3; ++i) v[i] = s.constant(in[i]);
        const auto y = align_features(s, v, cfg);
        SplitMix64 r(22);
        return sum_all(mul(y, s.constant(random_tensor<double>(y.dims(), r))));
      },
      ps, opt);
  EXPECT_TRUE(rep.passed) << rep.summary();
}
