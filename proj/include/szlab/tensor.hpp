#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "szlab/errors.hpp"

namespace szlab {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major array with an explicit shape.
///
/// Production code uses `Tensor` (32-bit). The double instantiation exists so
/// that every differentiable kernel can be re-run in double precision by the
/// finite-difference checker.
template <typename Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, Real fill = Real{0}) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)), data_(std::move(values)) {
    validate_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
      throw InvalidArgument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                            shape_string(shape_));
    }
  }

  static BasicTensor zeros(Shape shape) { return BasicTensor(std::move(shape), Real{0}); }
  static BasicTensor ones(Shape shape) { return BasicTensor(std::move(shape), Real{1}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<Real> values() noexcept { return data_; }
  std::span<const Real> values() const noexcept { return data_; }
  Real* data() noexcept { return data_.data(); }
  const Real* data() const noexcept { return data_.data(); }
  const std::vector<Real>& buffer() const noexcept { return data_; }

  Real& operator[](std::size_t i) noexcept { return data_[i]; }
  const Real& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Rank-2 (row, col) and rank-3 (channel, row, col) accessors.
  Real& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const Real& operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }
  Real& operator()(std::size_t ch, std::size_t r, std::size_t c) noexcept {
    return data_[(ch * shape_[1] + r) * shape_[2] + c];
  }
  const Real& operator()(std::size_t ch, std::size_t r, std::size_t c) const noexcept {
    return data_[(ch * shape_[1] + r) * shape_[2] + c];
  }

  BasicTensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw InvalidArgument("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return BasicTensor(std::move(shape), data_);
  }

  template <typename To>
  BasicTensor<To> cast() const {
    std::vector<To> out(data_.begin(), data_.end());
    return BasicTensor<To>(shape_, std::move(out));
  }

  void fill(Real v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw InvalidArgument("tensor shape must have at least one dimension");
    for (auto d : shape) {
      if (d == 0) throw InvalidArgument("tensor dimensions must be positive, got " + shape_string(shape));
    }
  }

  Shape shape_;
  std::vector<Real> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

template <typename Real>
void require_same_shape(const BasicTensor<Real>& a, const BasicTensor<Real>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                          shape_string(b.shape()));
  }
}

template <typename Real>
bool all_finite(const BasicTensor<Real>& t) {
  return std::all_of(t.values().begin(), t.values().end(), [](Real v) { return std::isfinite(v); });
}

template <typename Real>
void require_finite(const BasicTensor<Real>& t, const std::string& what) {
  if (!all_finite(t)) throw NumericFailure(what + ": non-finite value");
}

template <typename Real, typename F>
BasicTensor<Real> zip_with(const BasicTensor<Real>& a, const BasicTensor<Real>& b, const char* op, F f) {
  require_same_shape(a, b, op);
  BasicTensor<Real> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

template <typename Real>
BasicTensor<Real> operator+(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  return zip_with(a, b, "add", std::plus<Real>());
}

template <typename Real>
BasicTensor<Real> operator-(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  return zip_with(a, b, "sub", std::minus<Real>());
}

/// Elementwise (Hadamard) product.
template <typename Real>
BasicTensor<Real> hadamard(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  return zip_with(a, b, "hadamard", std::multiplies<Real>());
}

template <typename Real>
BasicTensor<Real> scaled(const BasicTensor<Real>& a, Real s) {
  BasicTensor<Real> out = a;
  for (auto& v : out.values()) v *= s;
  return out;
}

/// y += s * x
template <typename Real>
void axpy(Real s, const BasicTensor<Real>& x, BasicTensor<Real>& y) {
  require_same_shape(x, y, "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

template <typename Real>
BasicTensor<Real> clamped(const BasicTensor<Real>& a, Real lo, Real hi) {
  BasicTensor<Real> out = a;
  for (auto& v : out.values()) v = std::clamp(v, lo, hi);
  return out;
}

template <typename Real>
double sum(const BasicTensor<Real>& a) {
  double s = 0.0;
  for (Real v : a.values()) s += static_cast<double>(v);
  return s;
}

template <typename Real>
double dot(const BasicTensor<Real>& a, const BasicTensor<Real>& b) {
  require_same_shape(a, b, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename Real>
double squared_norm(const BasicTensor<Real>& a) {
  return dot(a, a);
}

template <typename Real>
double max_abs(const BasicTensor<Real>& a) {
  double m = 0.0;
  for (Real v : a.values()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

template <typename Real>
double mean(const BasicTensor<Real>& a) {
  return sum(a) / static_cast<double>(a.size());
}

}  // namespace szlab
