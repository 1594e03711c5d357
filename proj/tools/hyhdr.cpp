// hyhdr command-line front end: synth / train / infer / eval / summary.
#include <cstdio>
#include <iostream>
#include <regex>
#include <string>

#include "CLI11.hpp"
#include "hyhdr/hyhdr.hpp"

namespace {

std::pair<int, int> parse_size(const std::string& s) {
  static const std::regex re(R"((\d+)[xX](\d+))");
  std::smatch m;
  if (!std::regex_match(s, m, re)) throw hyhdr::ConfigError("--size must look like HxW, got '" + s + "'");
  return {std::stoi(m[1]), std::stoi(m[2])};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HDR deghosting with hybrid attention alignment and deformable transformer fusion"};
  app.require_subcommand(1);

  std::string out_dir, size = "64x64";
  int count = 4;
  std::uint64_t seed = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-exposure dataset");
  synth->add_option("--out", out_dir, "Output dataset directory")->required();
  synth->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "Image size HxW");
  synth->add_option("--seed", seed, "Generator seed");

  std::string data_dir, config_path, resume;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Train a model and write model.ckpt and loss.csv");
  train->add_option("--data", data_dir, "Dataset directory")->required();
  train->add_option("--out", out_dir, "Output directory")->required();
  train->add_option("--config", config_path, "Training config (JSON)");
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_flag("--quiet", quiet, "Do not print per-step losses");

  std::string ckpt, stack_dir, out_file;
  auto* infer = app.add_subcommand("infer", "Fuse one exposure stack into an HDR image");
  infer->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  infer->add_option("--stack", stack_dir, "Directory with frame_{1,2,3}.ppm and exposures.txt")->required();
  infer->add_option("--out", out_file, "Output .pfm (a .ppm preview is written beside it)")->required();

  bool json = false;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--data", data_dir, "Dataset directory")->required();
  eval->add_flag("--json", json, "Print the report as JSON instead of a table");

  auto* summary = app.add_subcommand("summary", "Print parameter counts for a config");
  summary->add_option("--config", config_path, "Training config (JSON)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      const auto [h, w] = parse_size(size);
      hyhdr::cmd_synth(out_dir, count, h, w, seed);
      std::cout << "wrote " << count << " samples to " << out_dir << '\n';
    } else if (*train) {
      const hyhdr::TrainConfig cfg = config_path.empty() ? hyhdr::TrainConfig{} : hyhdr::load_train_config(config_path);
      hyhdr::ProgressFn progress;
      if (!quiet) progress = [](const hyhdr::LossRecord& r) { std::cout << hyhdr::to_csv(r) << '\n'; };
      const hyhdr::TrainResult res = hyhdr::cmd_train(cfg, data_dir, out_dir, resume, progress);
      std::cout << "trained " << res.steps << " steps; checkpoint " << res.checkpoint.string() << '\n';
    } else if (*infer) {
      const hyhdr::HdrImage img = hyhdr::cmd_infer(ckpt, stack_dir, out_file);
      std::cout << "wrote " << out_file << " (" << img.height() << "x" << img.width() << ")\n";
    } else if (*eval) {
      const hyhdr::MetricTable t = hyhdr::cmd_eval(ckpt, data_dir);
      if (json) {
        std::cout << t.to_json().dump(2) << '\n';
      } else {
        std::cout << t.to_text();
      }
    } else if (*summary) {
      const hyhdr::TrainConfig cfg = config_path.empty() ? hyhdr::TrainConfig{} : hyhdr::load_train_config(config_path);
      const hyhdr::ModelSummary s = hyhdr::summarize(hyhdr::init_model<float>(cfg.model, cfg.seed));
      for (const auto& [group, n] : s.by_group) std::cout << group << ": " << n << '\n';
      std::cout << "total: " << s.total << " in " << s.tensors << " tensors\n";
    }
  } catch (const hyhdr::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
