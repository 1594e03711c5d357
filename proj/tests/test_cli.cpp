#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sys/wait.h>

#include "support.hpp"

using namespace hyhdr;
using hyhdr::testing::temp_dir;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

// Runs the CLI with stderr folded into stdout.
Run cli(const std::string& args) {
  const std::string cmd = std::string(HYHDR_CLI_PATH) + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) r.out += buf.data();
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST(Cli, HelpAndMissingSubcommand) {
  const auto help = cli("--help");
  EXPECT_EQ(help.code, 0);
  for (const char* sub : {"synth", "train", "infer", "eval"}) EXPECT_NE(help.out.find(sub), std::string::npos) << sub;
  EXPECT_NE(cli("").code, 0);
  EXPECT_NE(cli("frobnicate").code, 0);
}

TEST(Cli, MissingRequiredOptions) {
  EXPECT_NE(cli("synth").code, 0);
  EXPECT_NE(cli("train --data x").code, 0);
  EXPECT_NE(cli("infer --ckpt a --stack b").code, 0);
  EXPECT_NE(cli("eval --data x").code, 0);
}

TEST(Cli, SynthWritesLayoutAndRejectsBadSize) {
  const auto dir = temp_dir("cli_synth");
  const auto r = cli("synth --out " + q(dir / "d") + " --count 2 --size 16x24 --seed 3");
  ASSERT_EQ(r.code, 0) << r.out;
  for (const char* f : {"frame_1.ppm", "frame_2.ppm", "frame_3.ppm", "exposures.txt", "gt.pfm"})
    EXPECT_TRUE(fs::exists(dir / "d" / "sample_1" / f)) << f;
  EXPECT_EQ(read_pfm((dir / "d" / "sample_0" / "gt.pfm").string()).dims(), (Shape{16, 24, 3}));

  const auto bad = cli("synth --out " + q(dir / "e") + " --size 16by24");
  EXPECT_EQ(bad.code, 1);
  EXPECT_NE(bad.out.find("error:"), std::string::npos) << bad.out;
  EXPECT_NE(cli("synth --out " + q(dir / "e") + " --count 0").code, 0);
}

TEST(Cli, TrainReportsConfigAndDataErrors) {
  const auto dir = temp_dir("cli_train");
  {
    std::ofstream(dir / "bad.json") << R"({"learning_rate": 0.1})";
    std::ofstream(dir / "broken.json") << "{ not json";
  }
  ASSERT_EQ(cli("synth --out " + q(dir / "d") + " --count 1 --size 16x16").code, 0);

  auto r = cli("train --data " + q(dir / "d") + " --out " + q(dir / "o") + " --config " + q(dir / "bad.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("learning_rate"), std::string::npos) << r.out;

  r = cli("train --data " + q(dir / "d") + " --out " + q(dir / "o") + " --config " + q(dir / "broken.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error:"), std::string::npos) << r.out;

  r = cli("train --data " + q(dir / "d") + " --out " + q(dir / "o") + " --config " + q(dir / "absent.json"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("absent.json"), std::string::npos) << r.out;

  r = cli("train --data " + q(dir / "nowhere") + " --out " + q(dir / "o"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("nowhere"), std::string::npos) << r.out;

  // Default crop 128 does not fit a 16x16 dataset.
  r = cli("train --data " + q(dir / "d") + " --out " + q(dir / "o"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error:"), std::string::npos) << r.out;
}

TEST(Cli, InferAndEvalReportMissingFiles) {
  const auto dir = temp_dir("cli_infer");
  ASSERT_EQ(cli("synth --out " + q(dir / "d") + " --count 1 --size 16x16").code, 0);
  auto r = cli("infer --ckpt " + q(dir / "none.ckpt") + " --stack " + q(dir / "d" / "sample_0") + " --out " + q(dir / "x.pfm"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("none.ckpt"), std::string::npos) << r.out;

  {
    std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  }
  r = cli("eval --ckpt " + q(dir / "junk.ckpt") + " --data " + q(dir / "d"));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.out.find("error:"), std::string::npos) << r.out;
}

TEST(Cli, SmallEndToEndRun) {
  const auto dir = temp_dir("cli_e2e");
  {
    std::ofstream(dir / "cfg.json") << R"({"crop": 16, "stride": 16, "batch": 2, "max_steps": 3,
      "model": {"channels": 8, "window": 4, "rdtb_count": 1, "stl_per_rdtb": 2}})";
  }
  ASSERT_EQ(cli("synth --out " + q(dir / "d") + " --count 2 --size 16x16 --seed 1").code, 0);
  auto r = cli("train --quiet --data " + q(dir / "d") + " --out " + q(dir / "o") + " --config " + q(dir / "cfg.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("trained 3 steps"), std::string::npos) << r.out;
  EXPECT_TRUE(fs::exists(dir / "o" / "loss.csv"));

  r = cli("infer --ckpt " + q(dir / "o" / "model.ckpt") + " --stack " + q(dir / "d" / "sample_0") + " --out " + q(dir / "p" / "x.pfm"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(read_pfm((dir / "p" / "x.pfm").string()).dims(), (Shape{16, 16, 3}));
  EXPECT_TRUE(fs::exists(dir / "p" / "x.ppm"));

  r = cli("eval --json --ckpt " + q(dir / "o" / "model.ckpt") + " --data " + q(dir / "d"));
  ASSERT_EQ(r.code, 0) << r.out;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["samples"].size(), 2u);
  EXPECT_TRUE(j["mean"]["psnr_mu"].is_number());

  r = cli("summary --config " + q(dir / "cfg.json"));
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("total: "), std::string::npos) << r.out;
}
