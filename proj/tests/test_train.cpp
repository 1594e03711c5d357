#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "support.hpp"

using namespace hyhdr;
using hyhdr::testing::random_tensor;
using hyhdr::testing::temp_dir;

namespace {

ModelParams two_params(SplitMix64& rng) {
  ModelParams p;
  p.add("a", random_tensor<float>(Shape{3, 4}, rng));
  p.add("b", random_tensor<float>(Shape{5}, rng));
  return p;
}

TrainConfig tiny_train_config() {
  TrainConfig c;
  c.model = hyhdr::testing::tiny_config();
  c.crop = 16;
  c.stride = 8;
  c.epochs = 1000;
  c.seed = 77;
  return c;
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST(Adam, ZeroGradientsChangeNothing) {
  SplitMix64 rng(601);
  auto p = two_params(rng);
  const auto before = p;
  auto st = AdamState::zeros_like(p);
  std::vector<Tensor<float>> g{Tensor<float>(Shape{3, 4}), Tensor<float>(Shape{5})};
  for (std::uint64_t s = 1; s <= 3; ++s) adam_step(p, g, st, AdamConfig{}, s, 2e-4);
  EXPECT_TRUE(p == before);
  EXPECT_EQ(st.m.values()[0].max_abs(), 0.0f);
  EXPECT_EQ(st.v.values()[1].max_abs(), 0.0f);
}

TEST(Adam, FirstStepIsSignedLearningRate) {
  SplitMix64 rng(602);
  auto p = two_params(rng);
  const auto before = p;
  auto st = AdamState::zeros_like(p);
  std::vector<Tensor<float>> g{random_tensor<float>(Shape{3, 4}, rng), random_tensor<float>(Shape{5}, rng, -1e-3, 1e-3)};
  const double lr = 2e-4, eps = 1e-8;
  adam_step(p, g, st, AdamConfig{}, 1, lr);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < p.values()[i].size(); ++k) {
      const double gk = g[i][k];
      const double delta = static_cast<double>(p.values()[i][k]) - before.values()[i][k];
      // m_hat = g, v_hat = g^2 after bias correction; parameters are stored in float.
      EXPECT_NEAR(delta, -lr * gk / (std::abs(gk) + eps), 1.2e-7);
      if (std::abs(gk) > 1e-4) {
        EXPECT_NEAR(delta, -lr * (gk > 0 ? 1 : -1), 1.2e-7);
      }
    }
}

TEST(Adam, MatchesReferenceRecurrenceOverSteps) {
  SplitMix64 rng(603);
  auto p = two_params(rng);
  auto st = AdamState::zeros_like(p);
  const AdamConfig cfg;
  std::vector<double> ref(p.values()[0].values().begin(), p.values()[0].values().end());
  std::vector<double> m(ref.size()), v(ref.size());
  for (std::uint64_t s = 1; s <= 20; ++s) {
    std::vector<Tensor<float>> g{random_tensor<float>(Shape{3, 4}, rng), random_tensor<float>(Shape{5}, rng)};
    adam_step(p, g, st, cfg, s, 1e-2);
    for (std::size_t k = 0; k < ref.size(); ++k) {
      m[k] = 0.9 * m[k] + 0.1 * g[0][k];
      v[k] = 0.999 * v[k] + 0.001 * g[0][k] * g[0][k];
      const double mh = m[k] / (1 - std::pow(0.9, s)), vh = v[k] / (1 - std::pow(0.999, s));
      ref[k] -= 1e-2 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (std::size_t k = 0; k < ref.size(); ++k) EXPECT_NEAR(p.values()[0][k], ref[k], 1e-5);
}

TEST(Adam, RejectsNonFiniteGradientsBeforeUpdating) {
  SplitMix64 rng(604);
  auto p = two_params(rng);
  const auto before = p;
  auto st = AdamState::zeros_like(p);
  std::vector<Tensor<float>> g{random_tensor<float>(Shape{3, 4}, rng), random_tensor<float>(Shape{5}, rng)};
  g[1][3] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(adam_step(p, g, st, AdamConfig{}, 1, 2e-4), NumericError);
  EXPECT_TRUE(p == before);
  EXPECT_EQ(st.m.values()[0].max_abs(), 0.0f);
  g[1][3] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(adam_step(p, g, st, AdamConfig{}, 1, 2e-4), NumericError);
  g[1][3] = 0;
  EXPECT_THROW(adam_step(p, g, st, AdamConfig{}, 0, 2e-4), ConfigError);
  g.pop_back();
  EXPECT_THROW(adam_step(p, g, st, AdamConfig{}, 1, 2e-4), ShapeError);
}

TEST(Adam, StepSchedule) {
  EXPECT_DOUBLE_EQ(scheduled_lr(2e-4, 0), 2e-4);
  EXPECT_DOUBLE_EQ(scheduled_lr(2e-4, 49), 2e-4);
  EXPECT_NEAR(scheduled_lr(2e-4, 50), 2e-5, 1e-18);
  EXPECT_NEAR(scheduled_lr(2e-4, 149), 2e-6, 1e-19);
  EXPECT_THROW(scheduled_lr(2e-4, 1, 0.1, 0), ConfigError);
}

TEST(TrainConfig, DefaultsAndJsonRoundTrip) {
  const TrainConfig d;
  EXPECT_EQ(d.adam.lr, 2e-4);
  EXPECT_EQ(d.batch, 4);
  EXPECT_EQ(d.adam.beta1, 0.9);
  EXPECT_EQ(d.adam.beta2, 0.999);
  EXPECT_EQ(d.adam.eps, 1e-8);
  EXPECT_EQ(d.lr_decay, 0.1);
  EXPECT_EQ(d.lr_decay_epochs, 50);
  EXPECT_EQ(d.crop, 128);
  EXPECT_EQ(d.stride, 64);
  EXPECT_EQ(d.lambda, 1e-2);
  EXPECT_EQ(d.model.rdtb_count, 3);
  EXPECT_EQ(d.model.stl_per_rdtb, 6);
  EXPECT_EQ(d.model.window, 8);

  auto c = tiny_train_config();
  c.model.alignment = AlignmentMode::kGhostAttention;
  c.max_steps = 17;
  const auto back = train_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_TRUE(back.model == c.model);
  EXPECT_EQ(train_config_from_json(nlohmann::json::parse(R"({"lr": 0.001})")).adam.lr, 1e-3);
}

TEST(TrainConfig, RejectsBadInput) {
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"learning_rate": 1})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"model": {"width": 3}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"batch": "four"})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"batch": 0})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"lr_decay_epochs": 0})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"model": {"alignment": "both"}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse(R"({"model": {"channels": 10, "stl_heads": 4}})")), ConfigError);
  EXPECT_THROW(train_config_from_json(nlohmann::json::parse("[1, 2]")), ConfigError);
}

TEST(Trainer, EmptyDatasetAndOversizedCrop) {
  EXPECT_THROW(Trainer(tiny_train_config(), {}), ConfigError);
  auto c = tiny_train_config();
  c.crop = 64;
  EXPECT_THROW(Trainer(c, synth_dataset(1, 32, 32, 1)), ConfigError);
}

TEST(Trainer, EpochsBatchesAndSchedule) {
  auto c = tiny_train_config();
  c.batch = 3;
  c.lr_decay_epochs = 2;
  c.epochs = 3;
  Trainer t(c, synth_dataset(2, 24, 24, 3));  // 4 crops per sample
  EXPECT_EQ(t.example_count(), 8u);
  EXPECT_EQ(t.steps_per_epoch(), 3u);
  EXPECT_EQ(t.total_steps(), 9u);
  // One epoch visits every crop exactly once.
  std::vector<int> seen(8);
  for (int s = 0; s < 3; ++s) {
    for (std::size_t i : t.next_batch()) ++seen[i];
    EXPECT_EQ(t.current_lr(), 2e-4);
    t.train_step();
  }
  for (int v : seen) EXPECT_EQ(v, 1);
  EXPECT_EQ(t.epoch(), 1);
  for (int s = 0; s < 3; ++s) t.train_step();
  EXPECT_NEAR(t.current_lr(), 2e-5, 1e-18);
  while (!t.done()) t.train_step();
  EXPECT_EQ(t.step(), 9u);
}

TEST(Trainer, LossDecreasesOnOneSample) {
  auto c = tiny_train_config();
  c.max_steps = 50;
  Trainer t(c, synth_dataset(1, 24, 24, 5));
  LossRecord first, last;
  while (!t.done()) {
    const auto r = t.train_step();
    if (r.step == 1) first = r;
    last = r;
  }
  EXPECT_EQ(last.step, 50u);
  EXPECT_LT(last.total, first.total);
  EXPECT_NEAR(first.total, first.l1 + c.lambda * first.perceptual, 1e-6);
}

TEST(Trainer, SmoothedLossFallsOverTwoHundredSteps) {
  auto c = tiny_train_config();
  c.max_steps = 200;
  Trainer t(c, synth_dataset(2, 24, 24, 6));
  std::vector<double> loss;
  while (!t.done()) loss.push_back(t.train_step().total);
  std::vector<double> smooth;
  for (std::size_t i = 10; i <= loss.size(); i += 10) {
    double s = 0;
    for (std::size_t k = i - 10; k < i; ++k) s += loss[k];
    smooth.push_back(s / 10);
  }
  ASSERT_EQ(smooth.size(), 20u);
  EXPECT_LT(smooth.back(), smooth.front());
  EXPECT_LT(smooth[smooth.size() / 2], smooth.front());
  EXPECT_LT(smooth.back(), smooth[smooth.size() / 2]);
}

TEST(Pipeline, TrainIsDeterministicAndResumable) {
  const auto root = temp_dir("pipeline");
  cmd_synth(root / "data", 2, 24, 24, 11);
  auto c = tiny_train_config();
  c.max_steps = 8;
  const auto full = cmd_train(c, root / "data", root / "full");
  const auto again = cmd_train(c, root / "data", root / "again");
  EXPECT_EQ(full.steps, 8u);
  EXPECT_EQ(lines(full.log), lines(again.log));
  EXPECT_EQ(file_hash(full.checkpoint.string()), file_hash(again.checkpoint.string()));
  const auto log = lines(full.log);
  ASSERT_EQ(log.size(), 9u);
  EXPECT_EQ(log[0], "step,total,l1_term,perceptual_term,lr");

  auto first = c;
  first.max_steps = 5;
  cmd_train(first, root / "data", root / "split");
  const auto resumed = cmd_train(c, root / "data", root / "split", (root / "split" / "model.ckpt").string());
  EXPECT_EQ(resumed.steps, 8u);
  EXPECT_EQ(lines(resumed.log), log);
  const auto a = load_checkpoint(full.checkpoint.string());
  const auto b = load_checkpoint(resumed.checkpoint.string());
  EXPECT_TRUE(a.params == b.params);
  EXPECT_TRUE(a.adam_m == b.adam_m);
  EXPECT_TRUE(a.adam_v == b.adam_v);
  EXPECT_EQ(a.step, b.step);

  auto other = c;
  other.model.channels = 16;
  EXPECT_THROW(cmd_train(other, root / "data", root / "bad", full.checkpoint.string()), ConfigError);
  EXPECT_THROW(cmd_train(c, root / "empty_data_dir_missing", root / "x"), IoError);
  fs::create_directories(root / "empty");
  EXPECT_THROW(cmd_train(c, root / "empty", root / "x"), ConfigError);
}

TEST(Pipeline, InferAndEval) {
  const auto root = temp_dir("pipeline_infer");
  cmd_synth(root / "data", 2, 20, 20, 12);
  auto c = tiny_train_config();
  c.max_steps = 2;
  const auto res = cmd_train(c, root / "data", root / "run");
  const auto pred = cmd_infer(res.checkpoint.string(), root / "data" / "sample_1", root / "out" / "p.pfm");
  EXPECT_EQ(pred.radiance.dims(), (Shape{20, 20, 3}));
  EXPECT_EQ(read_pfm((root / "out" / "p.pfm").string()), pred.radiance);
  const auto preview = read_ppm((root / "out" / "p.ppm").string());
  const auto tm = mu_law_tonemap(pred.radiance.cast<double>());
  for (std::size_t i = 0; i < tm.size(); ++i) ASSERT_EQ(std::lround(preview[i] * 255.0f), std::lround(255.0 * tm[i]));
  cmd_infer(res.checkpoint.string(), root / "data" / "sample_1", root / "out" / "q.pfm");
  EXPECT_EQ(file_hash((root / "out" / "p.pfm").string()), file_hash((root / "out" / "q.pfm").string()));

  const auto table = cmd_eval(res.checkpoint.string(), root / "data");
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.names[1], "sample_1");
  const auto mean = table.mean();
  EXPECT_NEAR(mean.psnr_mu.db, (table.rows[0].psnr_mu.db + table.rows[1].psnr_mu.db) / 2, 1e-9);
  EXPECT_NEAR(mean.ssim_l, (table.rows[0].ssim_l + table.rows[1].ssim_l) / 2, 1e-9);

  auto gt_table = evaluate_pair(read_sample(root / "data" / "sample_0").gt, read_sample(root / "data" / "sample_0").gt);
  EXPECT_TRUE(gt_table.psnr_mu.identical);
  EXPECT_EQ(gt_table.ssim_mu, 1.0);

  fs::remove(root / "data" / "sample_1" / "frame_2.ppm");
  try {
    cmd_infer(res.checkpoint.string(), root / "data" / "sample_1", root / "out" / "r.pfm");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("frame_2.ppm"), std::string::npos);
  }
}
