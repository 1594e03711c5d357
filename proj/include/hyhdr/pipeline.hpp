// Command implementations behind the `hyhdr` executable.
#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyhdr/checkpoint.hpp"
#include "hyhdr/dataset.hpp"
#include "hyhdr/image_io.hpp"
#include "hyhdr/train.hpp"

namespace hyhdr {

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
  return train_config_from_json(j);
}

/// Writes DIR/sample_0 .. sample_{count-1}.
inline void cmd_synth(const fs::path& out, int count, int height, int width, std::uint64_t seed) {
  if (count <= 0) throw ConfigError("--count must be positive");
  const std::vector<Sample> data = synth_dataset(count, height, width, seed);
  for (int k = 0; k < count; ++k) write_sample(out / ("sample_" + std::to_string(k)), data[static_cast<std::size_t>(k)]);
}

struct TrainResult {
  fs::path checkpoint;
  fs::path log;
  std::uint64_t steps = 0;
  LossRecord last;
};

using ProgressFn = std::function<void(const LossRecord&)>;

/// Trains on every sample under data_dir and writes out_dir/model.ckpt and
/// out_dir/loss.csv. With a resume checkpoint, training continues from its
/// step and rows of an existing log beyond that step are dropped.
inline TrainResult cmd_train(const TrainConfig& cfg, const fs::path& data_dir, const fs::path& out_dir,
                             const std::string& resume = {}, const ProgressFn& progress = {}) {
  const std::vector<Sample> data = read_dataset(data_dir);
  if (data.empty()) throw ConfigError("no samples found in " + data_dir.string());
  Trainer trainer(cfg, data);
  fs::create_directories(out_dir);
  TrainResult res{out_dir / "model.ckpt", out_dir / "loss.csv", 0, {}};

  std::vector<std::string> kept;
  if (!resume.empty()) {
    trainer.restore(load_checkpoint(resume));
    std::ifstream old(res.log);
    std::string line;
    if (old && std::getline(old, line)) {
      while (std::getline(old, line)) {
        if (!line.empty() && std::stoull(line.substr(0, line.find(','))) <= trainer.step()) kept.push_back(line);
      }
    }
  }
  std::ofstream log(res.log, std::ios::trunc);
  if (!log) throw IoError("cannot write " + res.log.string());
  log << csv_header() << '\n';
  for (const std::string& l : kept) log << l << '\n';

  while (!trainer.done()) {
    res.last = trainer.train_step();
    log << to_csv(res.last) << '\n';
    if (progress) progress(res.last);
  }
  log.flush();
  if (!log) throw IoError("write failed: " + res.log.string());
  save_checkpoint(res.checkpoint.string(), trainer.checkpoint());
  res.steps = trainer.step();
  return res;
}

inline ModelConfig checkpoint_model(const Checkpoint& ck) {
  if (!ck.config.contains("model")) throw FormatError("checkpoint config lacks the model section");
  return model_config_from_json(ck.config.at("model"));
}

/// Writes the prediction as PFM and a mu-law 8-bit preview next to it (.ppm).
inline HdrImage cmd_infer(const std::string& ckpt_path, const fs::path& stack_dir, const fs::path& out_pfm) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const ModelConfig cfg = checkpoint_model(ck);
  const ExposureStack stack = read_stack(stack_dir);
  const HdrImage pred = predict(ck.params, cfg, stack);
  if (out_pfm.has_parent_path()) fs::create_directories(out_pfm.parent_path());
  write_pfm(out_pfm.string(), pred.radiance);
  fs::path preview = out_pfm;
  preview.replace_extension(".ppm");
  write_ppm(preview.string(), mu_law_tonemap(pred.radiance.cast<double>()));
  return pred;
}

inline MetricTable cmd_eval(const std::string& ckpt_path, const fs::path& data_dir) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const ModelConfig cfg = checkpoint_model(ck);
  MetricTable t;
  for (const fs::path& p : list_samples(data_dir)) {
    const Sample s = read_sample(p);
    t.names.push_back(p.filename().string());
    t.rows.push_back(evaluate_pair(predict(ck.params, cfg, s.stack), s.gt));
  }
  return t;
}

}  // namespace hyhdr
