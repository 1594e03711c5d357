// Central finite-difference check of tape gradients (64-bit tape).
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "hyhdr/params.hpp"
#include "hyhdr/rng.hpp"
#include "hyhdr/tape.hpp"

namespace hyhdr {

struct GradCheckOptions {
  double step = 1e-5;
  double tol = 1e-4;
  /// Gradients below this magnitude are compared absolutely.
  double floor = 1e-6;
  /// Elements checked per tensor (randomly sampled); 0 checks all.
  std::size_t samples_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0;
  std::size_t worst_index = 0;
  double analytic = 0;
  double numeric = 0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0;
  std::string worst;
  bool passed = true;

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "passed" : "FAILED") << ": max relative error " << max_rel_error;
    if (!worst.empty()) os << " at " << worst;
    return os.str();
  }
};

using GradCheckFn = std::function<Var<double>(Scope<double>&)>;

inline double relative_error(double analytic, double numeric, double floor) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

namespace detail {

// eval(p, i, delta) returns f with element i of tensor p shifted by delta.
template <class Eval>
GradCheckReport compare_gradients(const std::vector<Tensor<double>>& analytic, const ParamSet<double>& params, Eval&& eval,
                                  const GradCheckOptions& opt) {
  GradCheckReport report;
  SplitMix64 rng(opt.seed);
  for (std::size_t p = 0; p < params.size(); ++p) {
    GradCheckEntry entry;
    entry.name = params.names()[p];
    std::vector<std::size_t> picks(params.values()[p].size());
    for (std::size_t i = 0; i < picks.size(); ++i) picks[i] = i;
    if (opt.samples_per_tensor && opt.samples_per_tensor < picks.size()) {
      rng.shuffle(picks);
      picks.resize(opt.samples_per_tensor);
      std::sort(picks.begin(), picks.end());
    }
    for (std::size_t i : picks) {
      const double numeric = static_cast<double>((eval(p, i, opt.step) - eval(p, i, -opt.step)) / (2 * opt.step));
      const double err = relative_error(analytic[p][i], numeric, opt.floor);
      ++entry.checked;
      if (err >= entry.max_rel_error) {
        entry.max_rel_error = err;
        entry.worst_index = i;
        entry.analytic = analytic[p][i];
        entry.numeric = numeric;
      }
    }
    if (entry.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = entry.max_rel_error;
      std::ostringstream os;
      os << entry.name << "[" << entry.worst_index << "] (tape " << entry.analytic << ", fd " << entry.numeric << ")";
      report.worst = os.str();
    }
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < opt.tol;
  return report;
}

template <class F>
std::vector<Tensor<double>> tape_gradients(F&& f, ParamSet<double>& params) {
  Tape<double> tape;
  Scope<double> scope(tape, params);
  const Var<double> out = f(scope);
  tape.backward(out);
  return scope.gradients();
}

}  // namespace detail

/// Compares d f / d p from one backward pass against (f(p+h) - f(p-h)) / 2h for
/// every parameter in `params` (or a seeded sample of elements per tensor).
/// `params` is restored before returning.
inline GradCheckReport grad_check(const GradCheckFn& f, ParamSet<double>& params, const GradCheckOptions& opt = {}) {
  const auto analytic = detail::tape_gradients(f, params);
  auto eval = [&](std::size_t p, std::size_t i, double delta) {
    double& v = params.values()[p][i];
    const double saved = v;
    v = saved + delta;
    Tape<double> tape;
    Scope<double> scope(tape, params, false);
    const double out = f(scope).value()[0];
    v = saved;
    return out;
  };
  return detail::compare_gradients(analytic, params, eval, opt);
}

/// Same check with the finite differences evaluated in long double, for deep
/// graphs whose tiny gradients sit below double rounding at step h. `f` must
/// be callable with both Scope<double>& and Scope<long double>&.
template <class F>
GradCheckReport grad_check_extended(F&& f, ParamSet<double>& params, const GradCheckOptions& opt = {}) {
  const auto analytic = detail::tape_gradients(f, params);
  ParamSet<long double> wide;
  for (std::size_t p = 0; p < params.size(); ++p) wide.add(params.names()[p], params.values()[p].template cast<long double>());
  auto eval = [&](std::size_t p, std::size_t i, double delta) {
    long double& v = wide.values()[p][i];
    const long double saved = v;
    v = saved + static_cast<long double>(delta);
    Tape<long double> tape;
    Scope<long double> scope(tape, wide, false);
    const long double out = f(scope).value()[0];
    v = saved;
    return out;
  };
  return detail::compare_gradients(analytic, params, eval, opt);
}

}  // namespace hyhdr
