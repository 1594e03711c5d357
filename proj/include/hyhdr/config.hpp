// Architecture hyper-parameters.
#pragma once

#include <string>

#include "hyhdr/errors.hpp"

namespace hyhdr {

/// Which alignment branches feed the fusion network (ablation variants).
enum class AlignmentMode {
  kBaseline,          ///< shallow features only
  kGhostAttention,    ///< GA branch only
  kPatchAggregation,  ///< PA branch only
  kGated,             ///< PA + GA fused by the gating module
};

inline const char* to_string(AlignmentMode m) {
  switch (m) {
    case AlignmentMode::kBaseline: return "baseline";
    case AlignmentMode::kGhostAttention: return "ga";
    case AlignmentMode::kPatchAggregation: return "pa";
    case AlignmentMode::kGated: return "gated";
  }
  return "?";
}

inline AlignmentMode alignment_mode_from_string(const std::string& s) {
  if (s == "baseline") return AlignmentMode::kBaseline;
  if (s == "ga") return AlignmentMode::kGhostAttention;
  if (s == "pa") return AlignmentMode::kPatchAggregation;
  if (s == "gated") return AlignmentMode::kGated;
  throw ConfigError("unknown alignment mode: " + s);
}

struct ModelConfig {
  int channels = 16;      ///< feature width C (= attention dim d)
  int window = 8;         ///< PA patch size and STL/WDTL window size M
  int pa_heads = 1;
  int stl_heads = 2;
  int wdtl_heads = 2;
  int stl_per_rdtb = 6;
  int rdtb_count = 3;
  int mlp_ratio = 2;
  int ca_reduction = 4;
  int encoder_depth = 1;  ///< 3x3 convs per shallow encoder
  bool pa_shifted = true;  ///< average unshifted and M/2-shifted PA passes
  bool use_wdtl = true;
  AlignmentMode alignment = AlignmentMode::kGated;

  void validate() const {
    auto positive = [](int v, const char* name) {
      if (v <= 0) throw ConfigError(std::string(name) + " must be positive");
    };
    positive(channels, "channels");
    positive(window, "window");
    positive(pa_heads, "pa_heads");
    positive(stl_heads, "stl_heads");
    positive(wdtl_heads, "wdtl_heads");
    positive(mlp_ratio, "mlp_ratio");
    positive(ca_reduction, "ca_reduction");
    positive(encoder_depth, "encoder_depth");
    if (stl_per_rdtb < 0 || rdtb_count < 0) throw ConfigError("layer counts must be >= 0");
    if (channels % pa_heads || channels % stl_heads || channels % wdtl_heads) {
      throw ConfigError("channels must be divisible by every head count");
    }
    if (channels / ca_reduction < 1) throw ConfigError("channel-attention bottleneck is empty");
  }
};

}  // namespace hyhdr
