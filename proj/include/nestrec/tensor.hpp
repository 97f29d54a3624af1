#pragma once

// Dense double-precision tensors (1-D and 2-D, row-major). The model is tiny,
// so everything runs in 64-bit floats for the sake of reliable gradient checks.

#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "nestrec/annotation.hpp"  // error types
#include "nestrec/rng.hpp"

namespace nestrec {

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    v.assign(element_count(shape), 0.0);
  }

  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
  }

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor scalar(double x) {
    Tensor t({1});
    t.v[0] = x;
    return t;
  }

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values) {
    if (element_count(shape) != values.size())
      throw InternalError("tensor value count does not match shape");
    Tensor t;
    t.shape = std::move(shape);
    t.v = std::move(values);
    return t;
  }

  std::size_t size() const { return v.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& at(std::size_t i) { return v[i]; }
  double at(std::size_t i) const { return v[i]; }
  double& at(std::size_t r, std::size_t c) { return v[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return v[r * cols() + c]; }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }

  double l2_norm_squared() const {
    double s = 0;
    for (double x : v) s += x * x;
    return s;
  }
};

inline std::string shape_string(const Tensor& t) {
  std::string out = "[";
  for (std::size_t i = 0; i < t.shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(t.shape[i]);
  }
  return out + "]";
}

// Uniform in +-sqrt(6 / (fan_in + fan_out)); the fixed matrix initializer.
inline Tensor glorot_uniform(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t({rows, cols});
  double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
  for (double& x : t.v) x = rng.uniform(-bound, bound);
  return t;
}

}  // namespace nestrec
