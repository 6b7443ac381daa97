#pragma once

#include <cstddef>
#include <vector>

namespace refocus {

// Dense row-major tensor of doubles. Shapes here are only ever vectors and
// matrices; everything stays on the heap and copies are cheap at this scale.
struct Tensor {
  std::vector<size_t> shape;
  std::vector<double> v;

  Tensor() = default;

  static Tensor zeros(std::vector<size_t> shape);
  static Tensor vector(std::vector<double> values);
  static Tensor scalar(double value);

  size_t size() const { return v.size(); }
  size_t rows() const { return shape.empty() ? 0 : shape[0]; }
  size_t cols() const { return shape.size() < 2 ? 0 : shape[1]; }
  bool is_vector() const { return shape.size() == 1; }
  bool is_scalar() const { return shape.size() == 1 && v.size() == 1; }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& at(size_t i) { return v[i]; }
  double at(size_t i) const { return v[i]; }
  double& at(size_t r, size_t c) { return v[r * shape[1] + c]; }
  double at(size_t r, size_t c) const { return v[r * shape[1] + c]; }

  bool all_finite() const;
};

}  // namespace refocus
