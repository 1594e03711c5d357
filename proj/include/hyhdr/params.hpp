// Named parameter storage and the per-forward Scope that exposes parameters
// as tape leaves.
#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "hyhdr/errors.hpp"
#include "hyhdr/rng.hpp"
#include "hyhdr/tape.hpp"
#include "hyhdr/tensor.hpp"

namespace hyhdr {

/// Ordered name -> tensor map. Insertion order is the serialization order.
template <class T>
class ParamSet {
 public:
  void add(std::string name, Tensor<T> value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_.emplace(name, names_.size());
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
  }

  bool contains(std::string_view name) const { return index_.find(name) != index_.end(); }

  std::size_t index_of(std::string_view name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("unknown parameter: " + std::string(name));
    return it->second;
  }

  Tensor<T>& at(std::string_view name) { return values_[index_of(name)]; }
  const Tensor<T>& at(std::string_view name) const { return values_[index_of(name)]; }

  std::size_t size() const noexcept { return values_.size(); }
  const std::vector<std::string>& names() const noexcept { return names_; }
  std::vector<Tensor<T>>& values() noexcept { return values_; }
  const std::vector<Tensor<T>>& values() const noexcept { return values_; }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  template <class U>
  ParamSet<U> cast() const {
    ParamSet<U> out;
    for (std::size_t i = 0; i < values_.size(); ++i) out.add(names_[i], values_[i].template cast<U>());
    return out;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& v : values_) h = fnv1a_hash(v, h);
    return h;
  }

  friend bool operator==(const ParamSet& a, const ParamSet& b) {
    return a.names_ == b.names_ && a.values_ == b.values_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<T>> values_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

using ModelParams = ParamSet<float>;

/// Named debug tensors captured during a forward (attention maps, gates).
template <class T>
struct Trace {
  std::vector<std::pair<std::string, Tensor<T>>> entries;

  void record(std::string name, const Tensor<T>& value) { entries.emplace_back(std::move(name), value); }

  std::vector<const Tensor<T>*> find_all(std::string_view name) const {
    std::vector<const Tensor<T>*> out;
    for (const auto& [n, v] : entries) {
      if (n == name) out.push_back(&v);
    }
    return out;
  }
};

/// One forward pass worth of parameter bindings. Each parameter becomes a
/// single tape leaf on first use, so a weight used by several sub-modules
/// accumulates one combined gradient.
template <class T>
class Scope {
 public:
  using value_type = T;

  Scope(Tape<T>& tape, const ParamSet<T>& params, bool trainable = true, Trace<T>* trace = nullptr)
      : tape_(tape), params_(params), trainable_(trainable), trace_(trace), leaves_(params.size()) {}

  Var<T> param(std::string_view name) {
    const std::size_t i = params_.index_of(name);
    if (!leaves_[i]) {
      leaves_[i] = trainable_ ? tape_.variable(params_.values()[i]) : tape_.constant(params_.values()[i]);
    }
    return *leaves_[i];
  }

  Var<T> constant(Tensor<T> value) { return tape_.constant(std::move(value)); }

  Tape<T>& tape() noexcept { return tape_; }
  const ParamSet<T>& params() const noexcept { return params_; }
  Trace<T>* trace() const noexcept { return trace_; }

  /// Gradient of each parameter (ParamSet order); zeros where unused.
  std::vector<Tensor<T>> gradients() const {
    std::vector<Tensor<T>> out;
    out.reserve(leaves_.size());
    for (std::size_t i = 0; i < leaves_.size(); ++i) {
      out.push_back(leaves_[i] ? leaves_[i]->grad() : Tensor<T>(params_.values()[i].dims()));
    }
    return out;
  }

  bool used(std::string_view name) const { return leaves_[params_.index_of(name)].has_value(); }

 private:
  Tape<T>& tape_;
  const ParamSet<T>& params_;
  bool trainable_;
  Trace<T>* trace_;
  std::vector<std::optional<Var<T>>> leaves_;
};

namespace init {

/// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), drawn in double so every precision
/// sees the same values.
template <class T>
Tensor<T> fan_in_uniform(Shape dims, int fan_in, SplitMix64& rng, double gain = 1.0) {
  Tensor<T> t(std::move(dims));
  const double bound = gain / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <class T>
void conv(ParamSet<T>& ps, const std::string& prefix, int k, int cin, int cout, SplitMix64& rng) {
  ps.add(prefix + ".w", fan_in_uniform<T>(Shape{k, k, cin, cout}, k * k * cin, rng));
  ps.add(prefix + ".b", Tensor<T>(Shape{cout}));
}

template <class T>
void linear(ParamSet<T>& ps, const std::string& prefix, int cin, int cout, SplitMix64& rng, bool bias = true) {
  ps.add(prefix + ".w", fan_in_uniform<T>(Shape{cin, cout}, cin, rng));
  if (bias) ps.add(prefix + ".b", Tensor<T>(Shape{cout}));
}

template <class T>
void layer_norm(ParamSet<T>& ps, const std::string& prefix, int c) {
  ps.add(prefix + ".g", Tensor<T>(Shape{c}, T(1)));
  ps.add(prefix + ".b", Tensor<T>(Shape{c}));
}

}  // namespace init

}  // namespace hyhdr
