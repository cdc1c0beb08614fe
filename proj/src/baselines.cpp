#include "metaopt/baselines.hpp"

#include <cmath>
#include <stdexcept>

namespace metaopt {

void sgd_step(std::span<double> w, std::span<const double> g, double lr) {
  if (w.size() != g.size()) throw std::invalid_argument("sgd_step: size mismatch");
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
}

AdamState::AdamState(std::int64_t n, AdamConfig cfg) : cfg_(cfg) {
  if (n <= 0) throw std::invalid_argument("AdamState: need a positive parameter count");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
    throw std::invalid_argument("AdamState: betas must lie in [0,1)");
  if (cfg_.eps <= 0.0) throw std::invalid_argument("AdamState: eps must be positive");
  m_.assign(static_cast<std::size_t>(n), 0.0);
  v_.assign(static_cast<std::size_t>(n), 0.0);
}

void AdamState::step(std::span<double> w, std::span<const double> g) {
  if (w.size() != m_.size() || g.size() != m_.size())
    throw std::invalid_argument("AdamState: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < w.size(); ++i) {
    m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g[i];
    v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
    const double m_hat = m_[i] / c1;
    const double v_hat = v_[i] / c2;
    w[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
  }
}

void AdamState::reset() {
  t_ = 0;
  std::fill(m_.begin(), m_.end(), 0.0);
  std::fill(v_.begin(), v_.end(), 0.0);
}

std::vector<double> lr_grid(int lo, int hi) {
  if (lo > hi) throw std::invalid_argument("lr_grid: lo must not exceed hi");
  std::vector<double> out;
  for (int n = lo; n <= hi; ++n) out.push_back(std::pow(10.0, n / 2.0));
  return out;
}

}  // namespace metaopt
