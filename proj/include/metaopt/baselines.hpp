#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace metaopt {

void sgd_step(std::span<double> w, std::span<const double> g, double lr);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;  // added outside the square root
};

class AdamState {
 public:
  AdamState(std::int64_t n, AdamConfig cfg);

  // w -= lr * m_hat / (sqrt(v_hat) + eps), with bias-corrected moments.
  void step(std::span<double> w, std::span<const double> g);
  void reset();

  std::int64_t t() const { return t_; }
  const std::vector<double>& m() const { return m_; }
  const std::vector<double>& v() const { return v_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::vector<double> m_, v_;
};

// The learning-rate grid used everywhere a baseline is tuned: 10^(n/2) for
// integer n in [lo, hi].
std::vector<double> lr_grid(int lo = -12, int hi = 2);

}  // namespace metaopt
