// Full network: alignment subnetwork -> RDTB stack -> 3x3 conv head -> sigmoid.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "hyhdr/alignment.hpp"
#include "hyhdr/config.hpp"
#include "hyhdr/fusion.hpp"
#include "hyhdr/hdr.hpp"
#include "hyhdr/params.hpp"

namespace hyhdr {

template <class T = float>
ParamSet<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SplitMix64 rng(SplitMix64::mix(seed, 0x4D4F44454CULL));
  ParamSet<T> ps;
  init_alignment(ps, cfg, rng);
  init_fusion(ps, cfg, rng);
  init::conv(ps, "head", 3, cfg.channels, 3, rng);
  return ps;
}

/// Network output H_hat in (0, 1)^{H x W x 3}; inputs are the three 6-channel
/// X_i maps.
template <class T>
Var<T> hyhdrnet_forward(Scope<T>& s, const std::array<Var<T>, 3>& inputs, const ModelConfig& cfg) {
  for (const auto& x : inputs) {
    if (x.dims() != inputs[0].dims()) throw ShapeError("network inputs differ in size");
  }
  Var<T> f = align_features(s, inputs, cfg);
  for (int r = 0; r < cfg.rdtb_count; ++r) f = rdtb_block(s, f, r, cfg);
  return sigmoid(conv2d(f, s.param("head.w"), s.param("head.b")));
}

template <class T>
Var<T> hyhdrnet_forward(Scope<T>& s, const std::array<Tensor<float>, 3>& inputs, const ModelConfig& cfg) {
  std::array<Var<T>, 3> vars;
  for (std::size_t i = 0; i < 3; ++i) vars[i] = s.constant(inputs[i].template cast<T>());
  return hyhdrnet_forward(s, vars, cfg);
}

/// Inference on an exposure stack (no gradient bookkeeping).
inline HdrImage predict(const ModelParams& params, const ModelConfig& cfg, const ExposureStack& stack) {
  Tape<float> tape;
  Scope<float> scope(tape, params, false);
  const Var<float> out = hyhdrnet_forward(scope, build_network_input(stack), cfg);
  return HdrImage{out.value()};
}

struct ModelSummary {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_group;  ///< "align", "fusion", "head"
  std::size_t tensors = 0;
};

template <class T>
ModelSummary summarize(const ParamSet<T>& ps) {
  ModelSummary s;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string& name = ps.names()[i];
    const std::string group = name.substr(0, name.find('.'));
    s.by_group[group] += ps.values()[i].size();
    s.total += ps.values()[i].size();
  }
  s.tensors = ps.size();
  return s;
}

}  // namespace hyhdr
