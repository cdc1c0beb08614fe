#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metaopt/rng.hpp"

namespace metaopt {

using Shape = std::vector<std::int64_t>;

std::int64_t numel_of(const Shape& s);
std::string shape_str(const Shape& s);

// Dense row-major tensor of doubles. Shapes are validated at construction;
// the hot loops index `data` directly with precomputed strides.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s);
  Tensor(Shape s, double fill);

  static Tensor randn(Shape s, double stddev, Rng& rng);

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  std::int64_t dim(std::size_t i) const { return shape.at(i); }
  int rank() const { return static_cast<int>(shape.size()); }

  double& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  void fill(double v);
  void zero() { fill(0.0); }
};

bool same_shape(const Tensor& a, const Tensor& b);

double l2_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);
bool all_finite(std::span<const double> v);

// axpy: y += a * x
void axpy(double a, std::span<const double> x, std::span<double> y);

}  // namespace metaopt
