// Radiometric layer: LDR/HDR domain mapping, network input construction,
// mu-law tonemapping and the training loss.
#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "hyhdr/errors.hpp"
#include "hyhdr/ops.hpp"
#include "hyhdr/params.hpp"
#include "hyhdr/rng.hpp"
#include "hyhdr/tensor.hpp"

namespace hyhdr {

inline constexpr double kDefaultGamma = 2.2;
inline constexpr double kDefaultMu = 5000.0;
inline constexpr double kDefaultLambda = 1e-2;

namespace detail {

inline void require_unit_range(const Tensor<float>& t, const char* what) {
  for (float v : t.values()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw DomainError(std::string(what) + ": value outside [0, 1]");
  }
}

inline void require_image(const Tensor<float>& t, const char* what) {
  if (t.rank() != 3 || t.dims()[2] != 3) throw ShapeError(std::string(what) + " must be H x W x 3, got " + shape_str(t.dims()));
}

}  // namespace detail

/// One 8-bit capture normalised to [0, 1]. exposure_time = 2^ev relative to
/// the reference frame.
struct LdrFrame {
  Tensor<float> pixels;
  double exposure_time = 1.0;
  double ev = 0.0;

  static LdrFrame from_ev(Tensor<float> pixels, double ev) {
    LdrFrame f{std::move(pixels), std::exp2(ev), ev};
    f.validate();
    return f;
  }

  void validate() const {
    detail::require_image(pixels, "LDR frame");
    detail::require_unit_range(pixels, "LDR frame");
    if (!(exposure_time > 0)) throw DomainError("exposure time must be positive");
  }

  int height() const { return pixels.dims()[0]; }
  int width() const { return pixels.dims()[1]; }
};

/// Three frames in ascending EV; the middle one is the reference.
struct ExposureStack {
  static constexpr std::size_t kReference = 1;
  std::array<LdrFrame, 3> frames;

  void validate() const {
    for (const LdrFrame& f : frames) f.validate();
    for (std::size_t i = 1; i < 3; ++i) {
      if (frames[i].pixels.dims() != frames[0].pixels.dims()) {
        throw ShapeError("exposure stack frames differ in size: " + shape_str(frames[0].pixels.dims()) + " vs " +
                         shape_str(frames[i].pixels.dims()));
      }
      if (frames[i].ev < frames[i - 1].ev) throw ConfigError("exposure stack must be ordered by ascending EV");
    }
  }

  const LdrFrame& reference() const { return frames[kReference]; }
  int height() const { return frames[0].height(); }
  int width() const { return frames[0].width(); }
};

/// Linear-domain radiance normalised to [0, 1].
struct HdrImage {
  Tensor<float> radiance;

  void validate() const {
    detail::require_image(radiance, "HDR image");
    if (!radiance.all_finite()) throw NumericError("HDR image contains non-finite values");
    detail::require_unit_range(radiance, "HDR image");
  }

  int height() const { return radiance.dims()[0]; }
  int width() const { return radiance.dims()[1]; }
};

/// L^gamma / t, elementwise.
inline Tensor<float> gamma_correct(const LdrFrame& frame, double gamma = kDefaultGamma) {
  if (!(frame.exposure_time > 0)) throw DomainError("gamma_correct: exposure time must be positive");
  if (!(gamma > 0)) throw DomainError("gamma_correct: gamma must be positive");
  Tensor<float> out(frame.pixels.dims());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(std::pow(static_cast<double>(frame.pixels[i]), gamma) / frame.exposure_time);
  }
  return out;
}

/// X_i = concat(L_i, gamma_correct(L_i)) as H x W x 6, one per frame.
inline std::array<Tensor<float>, 3> build_network_input(const ExposureStack& stack, double gamma = kDefaultGamma) {
  stack.validate();
  std::array<Tensor<float>, 3> out;
  for (std::size_t f = 0; f < 3; ++f) {
    const LdrFrame& frame = stack.frames[f];
    const Tensor<float> hdr = gamma_correct(frame, gamma);
    const int h = frame.height(), w = frame.width();
    Tensor<float> x(Shape{h, w, 6});
    for (int y = 0; y < h; ++y) {
      for (int xx = 0; xx < w; ++xx) {
        for (int c = 0; c < 3; ++c) {
          x.at(y, xx, c) = frame.pixels.at(y, xx, c);
          x.at(y, xx, c + 3) = hdr.at(y, xx, c);
        }
      }
    }
    out[f] = std::move(x);
  }
  return out;
}

/// Plain-tensor mu-law: log(1 + mu x) / log(1 + mu), clamping to [0, 1].
template <class T>
Tensor<T> mu_law_tonemap(const Tensor<T>& x, double mu = kDefaultMu) {
  Tape<T> tape;
  return mu_law(tape.constant(x), static_cast<T>(mu)).value();
}

/// Frozen multi-scale convolutional feature extractor used by the perceptual
/// term. Weights come from a fixed seed and are never trained:
///   conv3x3(3->8) GELU, pool, conv3x3(8->16) GELU  -> feature 1
///   pool, conv3x3(16->16) GELU                     -> feature 2
template <class T>
class PerceptualExtractor {
 public:
  static constexpr std::uint64_t kSeed = 0x5EED'F00Dull;

  PerceptualExtractor() {
    SplitMix64 rng(kSeed);
    // He-style gain keeps activations O(1) through the GELUs.
    auto conv = [&](const std::string& name, int cin, int cout) {
      params_.add(name + ".w", init::fan_in_uniform<T>(Shape{3, 3, cin, cout}, 9 * cin, rng, std::sqrt(6.0)));
      params_.add(name + ".b", Tensor<T>(Shape{cout}));
    };
    conv("c1", 3, 8);
    conv("c2", 8, 16);
    conv("c3", 16, 16);
  }

  std::vector<Var<T>> features(const Var<T>& x) const {
    if (x.dims().size() != 3 || x.dims()[2] != 3) throw ShapeError("perceptual features need H x W x 3, got " + shape_str(x.dims()));
    if (x.dims()[0] < 4 || x.dims()[1] < 4) throw ShapeError("perceptual features need at least 4x4 input");
    Tape<T>& tape = x.tape();
    auto c = [&](const char* name) { return tape.constant(params_.at(name)); };
    Var<T> h = gelu(conv2d(x, c("c1.w"), c("c1.b")));
    Var<T> f1 = gelu(conv2d(avg_pool2(h), c("c2.w"), c("c2.b")));
    Var<T> f2 = gelu(conv2d(avg_pool2(f1), c("c3.w"), c("c3.b")));
    return {f1, f2};
  }

  std::vector<Tensor<T>> features(const Tensor<T>& x) const {
    Tape<T> tape;
    std::vector<Tensor<T>> out;
    for (const Var<T>& f : features(tape.constant(x))) out.push_back(f.value());
    return out;
  }

  std::uint64_t weights_hash() const { return params_.hash(); }
  const ParamSet<T>& params() const { return params_; }

  static const PerceptualExtractor& instance() {
    static const PerceptualExtractor extractor;
    return extractor;
  }

 private:
  ParamSet<T> params_;
};

template <class T>
struct LossTerms {
  Var<T> total;
  Var<T> l1;
  Var<T> perceptual;
};

/// mean|T(H) - T(H_hat)| + lambda * sum_f mean|phi_f(T(H)) - phi_f(T(H_hat))|.
template <class T>
LossTerms<T> hdr_loss(const Var<T>& pred, const Var<T>& target, T lambda = T(kDefaultLambda), T mu = T(kDefaultMu)) {
  detail::require_same_dims("hdr_loss", pred, target);
  if (lambda < 0) throw ConfigError("loss weight lambda must be >= 0");
  const Var<T> tp = mu_law(pred, mu);
  const Var<T> tt = mu_law(target, mu);
  LossTerms<T> out;
  out.l1 = mean_all(abs(sub(tp, tt)));
  Var<T> perceptual = pred.tape().constant(Tensor<T>::scalar(0));
  if (lambda > 0) {
    const auto& phi = PerceptualExtractor<T>::instance();
    const auto fp = phi.features(tp);
    const auto ft = phi.features(tt);
    for (std::size_t i = 0; i < fp.size(); ++i) perceptual = add(perceptual, mean_all(abs(sub(fp[i], ft[i]))));
  }
  out.perceptual = perceptual;
  out.total = add(out.l1, scale(perceptual, lambda));
  return out;
}

struct LossBreakdown {
  double total = 0;
  double l1 = 0;
  double perceptual = 0;
};

/// Value-level loss between two HDR images (64-bit evaluation).
inline LossBreakdown compute_loss(const HdrImage& pred, const HdrImage& gt, double lambda = kDefaultLambda) {
  if (pred.radiance.dims() != gt.radiance.dims()) {
    throw ShapeError("compute_loss: " + shape_str(pred.radiance.dims()) + " vs " + shape_str(gt.radiance.dims()));
  }
  Tape<double> tape;
  const LossTerms<double> terms =
      hdr_loss(tape.constant(pred.radiance.cast<double>()), tape.constant(gt.radiance.cast<double>()), lambda);
  return {terms.total.value()[0], terms.l1.value()[0], terms.perceptual.value()[0]};
}

}  // namespace hyhdr
