// Bias-corrected Adam and the step learning-rate schedule.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hyhdr/errors.hpp"
#include "hyhdr/params.hpp"

namespace hyhdr {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(lr > 0)) throw ConfigError("lr must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(eps > 0)) throw ConfigError("Adam eps must be positive");
  }
};

/// First and second moments, named like the parameters they track.
struct AdamState {
  ModelParams m;
  ModelParams v;

  static AdamState zeros_like(const ModelParams& p) {
    AdamState s;
    for (std::size_t i = 0; i < p.size(); ++i) {
      s.m.add(p.names()[i], Tensor<float>(p.values()[i].dims()));
      s.v.add(p.names()[i], Tensor<float>(p.values()[i].dims()));
    }
    return s;
  }

  bool matches(const ModelParams& p) const {
    if (m.size() != p.size() || v.size() != p.size()) return false;
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (m.names()[i] != p.names()[i] || v.names()[i] != p.names()[i]) return false;
      if (m.values()[i].dims() != p.values()[i].dims() || v.values()[i].dims() != p.values()[i].dims()) return false;
    }
    return true;
  }
};

/// lr * decay^floor(epoch / every).
inline double scheduled_lr(double lr, int epoch, double decay = 0.1, int every = 50) {
  if (every <= 0) throw ConfigError("lr decay interval must be positive");
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  return lr * std::pow(decay, epoch / every);
}

/// One Adam update at 1-based `step` with learning rate `lr`. Gradients are
/// checked for NaN/inf before anything is modified.
inline void adam_step(ModelParams& params, const std::vector<Tensor<float>>& grads, AdamState& state,
                      const AdamConfig& cfg, std::uint64_t step, double lr) {
  if (step < 1) throw ConfigError("Adam step counter starts at 1");
  if (grads.size() != params.size() || !state.matches(params)) throw ShapeError("adam_step: parameter/gradient mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].dims() != params.values()[i].dims()) {
      throw ShapeError("adam_step: gradient for " + params.names()[i] + " has shape " + shape_str(grads[i].dims()));
    }
    for (std::size_t k = 0; k < grads[i].size(); ++k) {
      if (!std::isfinite(grads[i][k])) {
        throw NumericError("adam_step: non-finite gradient in " + params.names()[i] + "[" + std::to_string(k) +
                           "] at step " + std::to_string(step) + "; update skipped");
      }
    }
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const double step_size = lr / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Tensor<float>& p = params.values()[i];
    Tensor<float>& m = state.m.values()[i];
    Tensor<float>& v = state.v.values()[i];
    for (std::size_t k = 0; k < p.size(); ++k) {
      const double g = grads[i][k];
      const double mk = cfg.beta1 * m[k] + (1 - cfg.beta1) * g;
      const double vk = cfg.beta2 * v[k] + (1 - cfg.beta2) * g * g;
      m[k] = static_cast<float>(mk);
      v[k] = static_cast<float>(vk);
      p[k] = static_cast<float>(p[k] - step_size * mk / (std::sqrt(vk) / sqrt_bc2 + cfg.eps));
    }
  }
}

}  // namespace hyhdr
