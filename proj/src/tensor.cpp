#include "metaopt/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace metaopt {

std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d <= 0) throw std::invalid_argument("tensor dimension must be positive, got " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

Tensor::Tensor(Shape s) : shape(std::move(s)), data(static_cast<std::size_t>(numel_of(shape)), 0.0) {}

Tensor::Tensor(Shape s, double v) : Tensor(std::move(s)) { fill(v); }

Tensor Tensor::randn(Shape s, double stddev, Rng& rng) {
  Tensor t(std::move(s));
  for (auto& x : t.data) x = stddev * rng.normal();
  return t;
}

void Tensor::fill(double v) {
  for (auto& x : data) x = v;
}

bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

}  // namespace metaopt
