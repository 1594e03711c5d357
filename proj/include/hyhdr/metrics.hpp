// PSNR and SSIM in the linear and mu-law tonemapped domains.
#pragma once

#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hyhdr/hdr.hpp"
#include "hyhdr/tensor.hpp"

namespace hyhdr {

enum class MetricDomain { kLinear, kMu };

/// PSNR in dB; `identical` marks MSE == 0 (db is +infinity then).
struct Psnr {
  double db = 0;
  bool identical = false;

  static Psnr from_mse(double mse, double peak = 1.0) {
    if (mse == 0) return {std::numeric_limits<double>::infinity(), true};
    return {10.0 * std::log10(peak * peak / mse), false};
  }
};

namespace detail {

template <class T>
Tensor<double> metric_domain(const Tensor<T>& x, MetricDomain d, double mu) {
  Tensor<double> v = x.template cast<double>();
  return d == MetricDomain::kMu ? mu_law_tonemap(v, mu) : v;
}

template <class T>
void require_same_image_dims(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) throw ShapeError("metric inputs differ: " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
  if (a.rank() != 3) throw ShapeError("metric inputs must be H x W x C, got " + shape_str(a.dims()));
}

}  // namespace detail

template <class T>
Psnr psnr(const Tensor<T>& a, const Tensor<T>& b, MetricDomain domain = MetricDomain::kLinear, double mu = kDefaultMu) {
  detail::require_same_image_dims(a, b);
  const Tensor<double> x = detail::metric_domain(a, domain, mu);
  const Tensor<double> y = detail::metric_domain(b, domain, mu);
  double sum = 0;
  for (std::size_t i = 0; i < x.size(); ++i) sum += (x[i] - y[i]) * (x[i] - y[i]);
  return Psnr::from_mse(sum / static_cast<double>(x.size()));
}

inline Psnr psnr(const HdrImage& a, const HdrImage& b, MetricDomain domain = MetricDomain::kLinear) {
  return psnr(a.radiance, b.radiance, domain);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over channels and the valid (unpadded) window positions, with a
/// normalised Gaussian window.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, MetricDomain domain = MetricDomain::kLinear,
            const SsimParams& p = {}, double mu = kDefaultMu) {
  detail::require_same_image_dims(a, b);
  const int h = a.dims()[0], w = a.dims()[1], c = a.dims()[2];
  if (h < p.window || w < p.window) {
    throw ConfigError("ssim: image " + shape_str(a.dims()) + " smaller than the " + std::to_string(p.window) + "px window");
  }
  const Tensor<double> x = detail::metric_domain(a, domain, mu);
  const Tensor<double> y = detail::metric_domain(b, domain, mu);

  std::vector<double> kernel(static_cast<std::size_t>(p.window));
  double ksum = 0;
  const int r = p.window / 2;
  for (int i = 0; i < p.window; ++i) {
    kernel[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - r) * (i - r) / (p.sigma * p.sigma));
    ksum += kernel[static_cast<std::size_t>(i)];
  }
  for (double& k : kernel) k /= ksum;

  const int ho = h - p.window + 1, wo = w - p.window + 1;
  // Separable valid filter of one channel of f(x, y).
  auto filter = [&](auto&& value, int ch) {
    std::vector<double> rows(static_cast<std::size_t>(h) * wo);
    for (int yy = 0; yy < h; ++yy) {
      for (int xx = 0; xx < wo; ++xx) {
        double s = 0;
        for (int k = 0; k < p.window; ++k) s += kernel[static_cast<std::size_t>(k)] * value(yy, xx + k, ch);
        rows[static_cast<std::size_t>(yy) * wo + xx] = s;
      }
    }
    std::vector<double> out(static_cast<std::size_t>(ho) * wo);
    for (int yy = 0; yy < ho; ++yy) {
      for (int xx = 0; xx < wo; ++xx) {
        double s = 0;
        for (int k = 0; k < p.window; ++k) s += kernel[static_cast<std::size_t>(k)] * rows[static_cast<std::size_t>(yy + k) * wo + xx];
        out[static_cast<std::size_t>(yy) * wo + xx] = s;
      }
    }
    return out;
  };

  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0;
  for (int ch = 0; ch < c; ++ch) {
    const auto mx = filter([&](int i, int j, int k) { return x.at(i, j, k); }, ch);
    const auto my = filter([&](int i, int j, int k) { return y.at(i, j, k); }, ch);
    const auto mxx = filter([&](int i, int j, int k) { return x.at(i, j, k) * x.at(i, j, k); }, ch);
    const auto myy = filter([&](int i, int j, int k) { return y.at(i, j, k) * y.at(i, j, k); }, ch);
    const auto mxy = filter([&](int i, int j, int k) { return x.at(i, j, k) * y.at(i, j, k); }, ch);
    double sum = 0;
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = mxx[i] - mx[i] * mx[i];
      const double vy = myy[i] - my[i] * my[i];
      const double cxy = mxy[i] - mx[i] * my[i];
      sum += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    total += sum / static_cast<double>(mx.size());
  }
  return total / c;
}

inline double ssim(const HdrImage& a, const HdrImage& b, MetricDomain domain = MetricDomain::kLinear) {
  return ssim(a.radiance, b.radiance, domain);
}

struct MetricReport {
  Psnr psnr_l;
  Psnr psnr_mu;
  double ssim_l = 0;
  double ssim_mu = 0;
};

inline MetricReport evaluate_pair(const HdrImage& pred, const HdrImage& gt) {
  return {psnr(pred, gt, MetricDomain::kLinear), psnr(pred, gt, MetricDomain::kMu),
          ssim(pred, gt, MetricDomain::kLinear), ssim(pred, gt, MetricDomain::kMu)};
}

inline nlohmann::json psnr_json(const Psnr& p) {
  return p.identical ? nlohmann::json("identical") : nlohmann::json(p.db);
}

inline nlohmann::json to_json(const MetricReport& r) {
  return {{"psnr_mu", psnr_json(r.psnr_mu)},
          {"psnr_l", psnr_json(r.psnr_l)},
          {"ssim_mu", r.ssim_mu},
          {"ssim_l", r.ssim_l}};
}

struct MetricTable {
  std::vector<std::string> names;
  std::vector<MetricReport> rows;

  /// Arithmetic means; a PSNR mean is `identical` when any row is.
  MetricReport mean() const {
    MetricReport m;
    if (rows.empty()) return m;
    const double n = static_cast<double>(rows.size());
    for (const MetricReport& r : rows) {
      m.psnr_l.identical = m.psnr_l.identical || r.psnr_l.identical;
      m.psnr_mu.identical = m.psnr_mu.identical || r.psnr_mu.identical;
      m.psnr_l.db += r.psnr_l.db / n;
      m.psnr_mu.db += r.psnr_mu.db / n;
      m.ssim_l += r.ssim_l / n;
      m.ssim_mu += r.ssim_mu / n;
    }
    if (m.psnr_l.identical) m.psnr_l.db = std::numeric_limits<double>::infinity();
    if (m.psnr_mu.identical) m.psnr_mu.db = std::numeric_limits<double>::infinity();
    return m;
  }

  nlohmann::json to_json() const {
    nlohmann::json samples = nlohmann::json::array();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      nlohmann::json row = hyhdr::to_json(rows[i]);
      row["name"] = names[i];
      samples.push_back(std::move(row));
    }
    return {{"samples", samples}, {"mean", hyhdr::to_json(mean())}};
  }

  std::string to_text() const {
    std::ostringstream os;
    auto cell = [&](const Psnr& p) {
      std::ostringstream c;
      if (p.identical) {
        c << "identical";
      } else {
        c << std::fixed << std::setprecision(4) << p.db;
      }
      return c.str();
    };
    os << std::left << std::setw(16) << "sample" << std::right << std::setw(12) << "PSNR-mu" << std::setw(12)
       << "PSNR-L" << std::setw(10) << "SSIM-mu" << std::setw(10) << "SSIM-L" << '\n';
    auto line = [&](const std::string& name, const MetricReport& r) {
      os << std::left << std::setw(16) << name << std::right << std::setw(12) << cell(r.psnr_mu) << std::setw(12)
         << cell(r.psnr_l) << std::fixed << std::setprecision(4) << std::setw(10) << r.ssim_mu << std::setw(10)
         << r.ssim_l << '\n';
    };
    for (std::size_t i = 0; i < rows.size(); ++i) line(names[i], rows[i]);
    line("mean", mean());
    return os.str();
  }
};

}  // namespace hyhdr
