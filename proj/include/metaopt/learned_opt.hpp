#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metaopt/inner_model.hpp"
#include "metaopt/rng.hpp"

namespace metaopt {

struct LearnedOptConfig {
  int n_inputs = 16;
  int hidden = 32;
  int n_outputs = 2;
  // w -= step_scale * a * exp(exp_scale * b), (a, b) being the two MLP outputs
  double step_scale = 0.001;
  double exp_scale = 0.001;
  std::array<double, 5> momentum_decays{0.5, 0.9, 0.99, 0.999, 0.9999};
  std::array<double, 6> time_scales{2, 10, 20, 100, 200, 1000};
  double feature_eps = 1e-8;  // inside the logs
  double norm_eps = 1e-6;     // added to the per-tensor rms denominators
};

// Per-parameter feature rows, in this order:
//   0      gradient
//   1..5   momentum EMAs at the five decay rates
//   6      parameter value
//   7      log(|w| + eps_f)
//   8..13  sin(s * t / pi) at the six timescales
//   14     log(||tensor||_2 + eps_f)
//   15     log(tensor element count)
// Rows 0..7 are divided by their per-tensor rms (+ eps_n); the rest are
// already O(1).

// The meta-parameters theta: a 16 -> 32(relu) -> 2 MLP applied independently
// to every parameter's feature row. Layout: [W1 | b1 | W2 | b2].
class LearnedOptimizer {
 public:
  explicit LearnedOptimizer(LearnedOptConfig cfg = {});

  const LearnedOptConfig& config() const { return cfg_; }
  std::int64_t theta_dim() const;  // 610 at the default sizes

  // Weights N(0, 0.1), biases zero: the initial update rule is a small random
  // step so early meta-training has signal without blowing up inner models.
  std::vector<double> init_theta(Rng& rng) const;

  // features is [n, n_inputs] row-major; out receives [n, n_outputs].
  void mlp_forward(std::span<const double> theta, std::span<const double> features,
                   std::int64_t n, std::span<double> out) const;

 private:
  LearnedOptConfig cfg_;
};

// Mutable per-inner-problem state: the five momentum accumulators and the
// step counter. Owns scratch so repeated steps do not allocate.
class LearnedOptState {
 public:
  LearnedOptState(const ParamLayout& layout, LearnedOptConfig cfg = {});

  void reset();
  std::int64_t t() const { return t_; }

  // Full update: advance t, fold g into the momenta, assemble features,
  // run the MLP and apply the delta to w.
  void apply_step(const LearnedOptimizer& opt, std::span<const double> theta, std::span<double> w,
                  std::span<const double> g);

  // Pieces exposed for oracle tests.
  void advance_momenta(std::span<const double> g);  // increments t
  void compute_features(std::span<const double> w, std::span<const double> g,
                        std::vector<double>& features) const;
  const std::vector<double>& momentum(int i) const { return m_[static_cast<std::size_t>(i)]; }

 private:
  const ParamLayout* layout_;
  LearnedOptConfig cfg_;
  std::int64_t t_ = 0;
  std::array<std::vector<double>, 5> m_;
  std::vector<double> feat_buf_, out_buf_;
};

// One inner training step driven by the learned optimizer; shared by the
// meta-training unrolls and the evaluation harness so both train identically.
double learned_inner_step(const InnerModel& model, const ImageBatch& batch,
                          const LearnedOptimizer& opt, std::span<const double> theta,
                          LearnedOptState& state, std::span<double> w, std::span<double> grad_buf,
                          InnerWorkspace& ws);

// Binary checkpoint (magic, version, layer sizes, raw doubles) plus a text
// sidecar carrying the dimensions and an fnv1a-64 payload hash.
void save_theta_checkpoint(const std::string& path, std::span<const double> theta,
                           const LearnedOptConfig& cfg);
std::vector<double> load_theta_checkpoint(const std::string& path, const LearnedOptConfig& cfg);

std::uint64_t fnv1a64(std::span<const unsigned char> bytes);

}  // namespace metaopt
