// Copyright (c) 2026 The mtfuse Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors and the deterministic RNG used for every
// initialization and sampling decision in the library.

#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mtfuse {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& shape) {
  if (shape.empty()) throw std::invalid_argument("shape must have at least one dimension");
  std::int64_t n = 1;
  for (int extent : shape) {
    if (extent <= 0) throw std::invalid_argument("shape extents must be positive");
    n *= extent;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Plain value container. Autograd bookkeeping lives in Graph; a Tensor only
// carries the persistent gradient slot that optimizers consume.
template <typename Real>
struct Tensor {
  Shape shape;
  std::vector<Real> values;
  std::vector<Real> grad;  // empty means "no gradient present"
  bool requires_grad = false;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), values(shape_numel(shape), Real(0)) {}
  Tensor(Shape s, std::vector<Real> v) : shape(std::move(s)), values(std::move(v)) {
    if (static_cast<std::int64_t>(values.size()) != shape_numel(shape)) {
      throw std::invalid_argument("tensor values length " + std::to_string(values.size()) +
                                  " does not match shape " + shape_str(shape));
    }
  }

  static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
  static Tensor full(Shape s, Real v) {
    Tensor t(std::move(s));
    std::fill(t.values.begin(), t.values.end(), v);
    return t;
  }

  std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
  int rows() const { return shape.size() == 2 ? shape[0] : (shape.size() == 1 ? 1 : throw_rank()); }
  int cols() const { return shape.size() == 2 ? shape[1] : (shape.size() == 1 ? shape[0] : throw_rank()); }

  Real& at(int i, int j) { return values[static_cast<std::size_t>(i) * cols() + j]; }
  Real at(int i, int j) const { return values[static_cast<std::size_t>(i) * cols() + j]; }

  bool has_grad() const { return !grad.empty(); }
  // Allocates (or keeps) the gradient slot and zeroes it.
  void zero_grad() { grad.assign(values.size(), Real(0)); }
  void clear_grad() { grad.clear(); }

  bool all_finite() const {
    for (Real v : values) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

 private:
  [[noreturn]] static int throw_rank() { throw std::logic_error("rows()/cols() on tensor of rank > 2"); }
};

// A parameter tensor tagged with a stable name, used wherever code needs to
// enumerate trainable state (optimizers, checkpoints, gradient checks).
template <typename Real>
struct NamedParam {
  std::string name;
  Tensor<Real>* tensor = nullptr;
};

// mt19937_64 output is pinned by the standard; the distributions below are
// hand-rolled so that streams are identical across platforms and across the
// float/double build modes.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Box-Muller, second draw cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [lo, hi] inclusive.
  int uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(static_cast<std::uint64_t>(uniform() * static_cast<double>(span)) % span);
  }

  // Draw an index according to positive weights.
  int weighted_index(const std::vector<double>& weights) {
    if (weights.empty()) throw std::invalid_argument("weighted_index: empty weight vector");
    double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (total <= 0.0) throw std::invalid_argument("weighted_index: weights must sum to a positive value");
    double x = uniform() * total;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      x -= weights[i];
      if (x < 0.0) return static_cast<int>(i);
    }
    return static_cast<int>(weights.size()) - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(uniform_int(0, i))]);
    }
  }

  std::uint64_t raw() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

template <typename Real>
Tensor<Real> gaussian_tensor(Shape shape, Rng& rng, double stddev) {
  Tensor<Real> t(std::move(shape));
  for (Real& v : t.values) v = static_cast<Real>(stddev * rng.normal());
  return t;
}

}  // namespace mtfuse
