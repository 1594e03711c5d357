// Dense row-major tensor. Feature maps use H x W x C layout throughout.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "hyhdr/errors.hpp"

namespace hyhdr {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& dims) {
  std::size_t n = 1;
  for (int d : dims) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape dims, T fill = T(0)) : dims_(std::move(dims)) {
    check_dims();
    data_.assign(shape_size(dims_), fill);
  }

  Tensor(Shape dims, std::vector<T> values) : dims_(std::move(dims)), data_(std::move(values)) {
    check_dims();
    if (data_.size() != shape_size(dims_)) {
      throw ShapeError("tensor " + shape_str(dims_) + " given " + std::to_string(data_.size()) +
                       " values");
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

  const Shape& dims() const noexcept { return dims_; }
  int rank() const noexcept { return static_cast<int>(dims_.size()); }
  int dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw ShapeError("axis out of range for " + shape_str(dims_));
    return dims_[static_cast<std::size_t>(axis)];
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Element of a rank-3 (H x W x C) tensor.
  T& at(int y, int x, int c) {
    return data_[(static_cast<std::size_t>(y) * dims_[1] + x) * dims_[2] + c];
  }
  const T& at(int y, int x, int c) const {
    return data_[(static_cast<std::size_t>(y) * dims_[1] + x) * dims_[2] + c];
  }

  Tensor reshaped(Shape dims) const& {
    Tensor out = *this;
    out.reshape(std::move(dims));
    return out;
  }
  Tensor reshaped(Shape dims) && {
    reshape(std::move(dims));
    return std::move(*this);
  }

  void reshape(Shape dims) {
    if (shape_size(dims) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_str(dims_) + " to " + shape_str(dims));
    }
    dims_ = std::move(dims);
    check_dims();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    std::transform(data_.begin(), data_.end(), out.begin(), [](T v) { return static_cast<U>(v); });
    return Tensor<U>(dims_, std::move(out));
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  T max_abs() const {
    T m = 0;
    for (T v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (int d : dims_) {
      if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(dims_));
    }
  }

  Shape dims_;
  std::vector<T> data_;
};

/// Max |a - b| over all elements; shapes must agree.
template <class T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) {
    throw ShapeError("max_abs_diff: " + shape_str(a.dims()) + " vs " + shape_str(b.dims()));
  }
  T m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Bytes of the value storage hashed with FNV-1a (64-bit).
template <class T>
std::uint64_t fnv1a_hash(const Tensor<T>& t, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = reinterpret_cast<const unsigned char*>(t.data());
  for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace hyhdr
