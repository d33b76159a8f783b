#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace sed {

// Dense row-major double tensor. Shapes are small (<= 4 dims in practice).
struct Tensor {
  std::vector<int> shape;
  std::vector<double> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), v(numel(shape), 0.0) {}
  Tensor(std::vector<int> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != numel(shape))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static int64_t numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw std::invalid_argument("tensor: non-positive dim");
      n *= d;
    }
    return n;
  }

  static Tensor scalar(double x) { return Tensor({1}, {x}); }

  int64_t size() const { return static_cast<int64_t>(v.size()); }
  double& operator[](int64_t i) { return v[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return v[static_cast<size_t>(i)]; }

  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(double x) { std::fill(v.begin(), v.end(), x); }

  bool all_finite() const {
    for (double x : v)
      if (!std::isfinite(x)) return false;
    return true;
  }
};

}  // namespace sed
