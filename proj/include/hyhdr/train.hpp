// Training configuration, the Adam training loop over seeded crop batches,
// and dataset evaluation.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyhdr/checkpoint.hpp"
#include "hyhdr/config.hpp"
#include "hyhdr/datagen.hpp"
#include "hyhdr/hdr.hpp"
#include "hyhdr/metrics.hpp"
#include "hyhdr/model.hpp"
#include "hyhdr/optim.hpp"

namespace hyhdr {

struct TrainConfig {
  AdamConfig adam;
  int batch = 4;
  double lr_decay = 0.1;
  int lr_decay_epochs = 50;
  int epochs = 5;
  int crop = 128;
  int stride = 64;
  double lambda = kDefaultLambda;
  ModelConfig model;
  std::uint64_t seed = 0;
  /// Hard cap on optimizer steps; 0 means epochs * steps_per_epoch.
  std::uint64_t max_steps = 0;

  void validate() const {
    adam.validate();
    model.validate();
    if (batch <= 0) throw ConfigError("batch must be positive");
    if (!(lr_decay > 0)) throw ConfigError("lr_decay must be positive");
    if (lr_decay_epochs <= 0) throw ConfigError("lr_decay_epochs must be positive");
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (crop <= 0 || stride <= 0) throw ConfigError("crop and stride must be positive");
    if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
  }
};

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"channels", m.channels},         {"window", m.window},
          {"pa_heads", m.pa_heads},         {"stl_heads", m.stl_heads},
          {"wdtl_heads", m.wdtl_heads},     {"stl_per_rdtb", m.stl_per_rdtb},
          {"rdtb_count", m.rdtb_count},     {"mlp_ratio", m.mlp_ratio},
          {"ca_reduction", m.ca_reduction}, {"encoder_depth", m.encoder_depth},
          {"pa_shifted", m.pa_shifted},     {"use_wdtl", m.use_wdtl},
          {"alignment", to_string(m.alignment)}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"lr", c.adam.lr},
          {"batch", c.batch},
          {"beta1", c.adam.beta1},
          {"beta2", c.adam.beta2},
          {"eps", c.adam.eps},
          {"lr_decay", c.lr_decay},
          {"lr_decay_epochs", c.lr_decay_epochs},
          {"epochs", c.epochs},
          {"crop", c.crop},
          {"stride", c.stride},
          {"lambda", c.lambda},
          {"model", to_json(c.model)},
          {"seed", c.seed},
          {"max_steps", c.max_steps}};
}

namespace detail {

template <class V>
void read_field(const nlohmann::json& j, const char* key, V& out) {
  const auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<V>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const char* where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(known.begin(), known.end(), [&](const char* n) { return k == n; })) {
      throw ConfigError(std::string("unknown ") + where + " field '" + k + "'");
    }
  }
}

}  // namespace detail

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"channels", "window", "pa_heads", "stl_heads", "wdtl_heads", "stl_per_rdtb", "rdtb_count",
                          "mlp_ratio", "ca_reduction", "encoder_depth", "pa_shifted", "use_wdtl", "alignment"},
                         "model");
  ModelConfig m;
  detail::read_field(j, "channels", m.channels);
  detail::read_field(j, "window", m.window);
  detail::read_field(j, "pa_heads", m.pa_heads);
  detail::read_field(j, "stl_heads", m.stl_heads);
  detail::read_field(j, "wdtl_heads", m.wdtl_heads);
  detail::read_field(j, "stl_per_rdtb", m.stl_per_rdtb);
  detail::read_field(j, "rdtb_count", m.rdtb_count);
  detail::read_field(j, "mlp_ratio", m.mlp_ratio);
  detail::read_field(j, "ca_reduction", m.ca_reduction);
  detail::read_field(j, "encoder_depth", m.encoder_depth);
  detail::read_field(j, "pa_shifted", m.pa_shifted);
  detail::read_field(j, "use_wdtl", m.use_wdtl);
  std::string mode = to_string(m.alignment);
  detail::read_field(j, "alignment", mode);
  m.alignment = alignment_mode_from_string(mode);
  m.validate();
  return m;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"lr", "batch", "beta1", "beta2", "eps", "lr_decay", "lr_decay_epochs", "epochs", "crop",
                          "stride", "lambda", "model", "seed", "max_steps"},
                         "config");
  TrainConfig c;
  detail::read_field(j, "lr", c.adam.lr);
  detail::read_field(j, "batch", c.batch);
  detail::read_field(j, "beta1", c.adam.beta1);
  detail::read_field(j, "beta2", c.adam.beta2);
  detail::read_field(j, "eps", c.adam.eps);
  detail::read_field(j, "lr_decay", c.lr_decay);
  detail::read_field(j, "lr_decay_epochs", c.lr_decay_epochs);
  detail::read_field(j, "epochs", c.epochs);
  detail::read_field(j, "crop", c.crop);
  detail::read_field(j, "stride", c.stride);
  detail::read_field(j, "lambda", c.lambda);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "max_steps", c.max_steps);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  c.validate();
  return c;
}

inline bool operator==(const ModelConfig& a, const ModelConfig& b) { return to_json(a) == to_json(b); }

struct LossRecord {
  std::uint64_t step = 0;  ///< 1-based
  double total = 0;
  double l1 = 0;
  double perceptual = 0;
  double lr = 0;
};

inline std::string csv_header() { return "step,total,l1_term,perceptual_term,lr"; }

inline std::string to_csv(const LossRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g", static_cast<unsigned long long>(r.step), r.total,
                r.l1, r.perceptual, r.lr);
  return buf;
}

/// Crop-level training example with its network inputs precomputed.
struct TrainExample {
  std::array<Tensor<float>, 3> inputs;
  Tensor<float> target;
};

/// Owns parameters and optimizer state. Each epoch visits every crop once in
/// an order fixed by (seed, epoch); a step averages gradients over one batch.
class Trainer {
 public:
  Trainer(TrainConfig cfg, const std::vector<Sample>& data) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (data.empty()) throw ConfigError("training dataset is empty");
    for (const Sample& s : data) {
      for (const Sample& c : crop_patches(s, cfg_.crop, cfg_.stride)) {
        examples_.push_back({build_network_input(c.stack), c.gt.radiance});
      }
    }
    params_ = init_model<float>(cfg_.model, cfg_.seed);
    state_ = AdamState::zeros_like(params_);
  }

  /// Restores parameters, moments and the step counter.
  void restore(const Checkpoint& ck) {
    if (!(model_config_from_json(ck.config.at("model")) == cfg_.model)) {
      throw ConfigError("checkpoint model config differs from the training config");
    }
    ModelParams fresh = init_model<float>(cfg_.model, 0);
    if (fresh.names() != ck.params.names()) throw FormatError("checkpoint parameters do not match the model");
    params_ = ck.params;
    state_ = AdamState{ck.adam_m, ck.adam_v};
    if (!state_.matches(params_)) throw FormatError("checkpoint optimizer state does not match the model");
    step_ = ck.step;
  }

  Checkpoint checkpoint() const { return {params_, to_json(cfg_), step_, state_.m, state_.v}; }

  std::size_t example_count() const { return examples_.size(); }
  std::uint64_t steps_per_epoch() const {
    return (examples_.size() + static_cast<std::size_t>(cfg_.batch) - 1) / static_cast<std::size_t>(cfg_.batch);
  }
  std::uint64_t total_steps() const {
    const std::uint64_t full = static_cast<std::uint64_t>(cfg_.epochs) * steps_per_epoch();
    return cfg_.max_steps ? std::min(cfg_.max_steps, full) : full;
  }
  /// Steps already taken.
  std::uint64_t step() const { return step_; }
  int epoch() const { return static_cast<int>(step_ / steps_per_epoch()); }
  bool done() const { return step_ >= total_steps(); }

  double current_lr() const { return scheduled_lr(cfg_.adam.lr, epoch(), cfg_.lr_decay, cfg_.lr_decay_epochs); }

  /// Crop indices of the batch for the next step.
  std::vector<std::size_t> next_batch() const {
    std::vector<std::size_t> order(examples_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    SplitMix64 rng(SplitMix64::mix(cfg_.seed, 0xE90C0000ULL + static_cast<std::uint64_t>(epoch())));
    rng.shuffle(order);
    const std::size_t b = static_cast<std::size_t>(step_ % steps_per_epoch()) * static_cast<std::size_t>(cfg_.batch);
    const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg_.batch));
    return {order.begin() + static_cast<std::ptrdiff_t>(b), order.begin() + static_cast<std::ptrdiff_t>(e)};
  }

  /// One optimizer step; the record holds the batch-mean loss before the update.
  LossRecord train_step() {
    const std::vector<std::size_t> batch = next_batch();
    const double lr = current_lr();
    std::vector<Tensor<float>> grads;
    LossRecord rec;
    for (std::size_t idx : batch) {
      Tape<float> tape;
      Scope<float> scope(tape, params_);
      const Var<float> pred = hyhdrnet_forward(scope, examples_[idx].inputs, cfg_.model);
      const LossTerms<float> loss = hdr_loss(pred, tape.constant(examples_[idx].target), static_cast<float>(cfg_.lambda));
      tape.backward(loss.total);
      rec.total += loss.total.value()[0];
      rec.l1 += loss.l1.value()[0];
      rec.perceptual += loss.perceptual.value()[0];
      std::vector<Tensor<float>> g = scope.gradients();
      if (grads.empty()) {
        grads = std::move(g);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) {
          for (std::size_t k = 0; k < g[i].size(); ++k) grads[i][k] += g[i][k];
        }
      }
    }
    const float inv = 1.0f / static_cast<float>(batch.size());
    for (auto& g : grads) {
      for (float& v : g.values()) v *= inv;
    }
    const double n = static_cast<double>(batch.size());
    rec.total /= n;
    rec.l1 /= n;
    rec.perceptual /= n;
    rec.lr = lr;
    adam_step(params_, grads, state_, cfg_.adam, step_ + 1, lr);
    rec.step = ++step_;
    return rec;
  }

  const ModelParams& params() const { return params_; }
  const TrainConfig& config() const { return cfg_; }

 private:
  TrainConfig cfg_;
  std::vector<TrainExample> examples_;
  ModelParams params_;
  AdamState state_;
  std::uint64_t step_ = 0;
};

inline MetricTable evaluate_dataset(const ModelParams& params, const ModelConfig& cfg, const std::vector<Sample>& data,
                                    const std::vector<std::string>& names = {}) {
  MetricTable t;
  for (std::size_t i = 0; i < data.size(); ++i) {
    t.names.push_back(i < names.size() ? names[i] : "sample_" + std::to_string(i));
    t.rows.push_back(evaluate_pair(predict(params, cfg, data[i].stack), data[i].gt));
  }
  return t;
}

}  // namespace hyhdr
