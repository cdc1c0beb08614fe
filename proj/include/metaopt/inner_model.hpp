#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metaopt/dataset.hpp"
#include "metaopt/ops.hpp"
#include "metaopt/rng.hpp"
#include "metaopt/tensor.hpp"

namespace metaopt {

// Where each named parameter tensor lives inside the flat parameter vector.
// The learned optimizer needs this to normalize per tensor and to compute
// tensor-level features.
struct ParamEntry {
  std::string name;
  Shape shape;
  std::int64_t offset = 0;
  std::int64_t size = 0;
  std::int64_t fan_in = 0;
  bool is_bias = false;
};

struct ParamLayout {
  std::vector<ParamEntry> tensors;
  std::int64_t n_params = 0;
};

// Scratch tensors so repeated loss/grad calls do not allocate. One per
// thread; the model itself is immutable after construction.
struct InnerWorkspace {
  std::array<Tensor, 4> w, b, pre, post, gw, gb, gpre, gpost;
  Tensor fc_w, fc_b, pooled, logits, gfc_w, gfc_b, gpooled, glogits, gx;
};

// Four stride-2/stride-1 conv blocks (ReLU), global spatial mean, then a
// linear head. Parameters live in one flat vector so optimizers can treat
// the model as a plain R^n objective.
class InnerModel {
 public:
  struct Config {
    int in_channels = 3;
    int height = 32;
    int width = 32;
    int n_classes = 10;
    std::array<int, 4> channels{32, 32, 64, 64};
    std::array<int, 4> strides{2, 2, 1, 1};
    int kernel = 3;
  };

  explicit InnerModel(Config cfg);

  const Config& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::int64_t n_params() const { return layout_.n_params; }

  // He-normal weights (std sqrt(2/fan_in)), zero biases.
  std::vector<double> init_params(Rng& rng) const;

  double loss_and_grad(std::span<const double> params, const ImageBatch& batch,
                       std::span<double> grad, InnerWorkspace& ws) const;
  double loss(std::span<const double> params, const ImageBatch& batch, InnerWorkspace& ws) const;
  double accuracy(std::span<const double> params, const ImageBatch& batch,
                  InnerWorkspace& ws) const;

  // Convenience overloads for tests and one-off calls.
  double loss_and_grad(std::span<const double> params, const ImageBatch& batch,
                       std::span<double> grad) const;
  double loss(std::span<const double> params, const ImageBatch& batch) const;

 private:
  void forward(std::span<const double> params, const ImageBatch& batch, InnerWorkspace& ws) const;

  Config cfg_;
  ParamLayout layout_;
};

// Analytic gradients vs central differences on randomized small model
// configurations in full double precision. Inits whose ReLU pre-activations
// sit within 100*eps of a kink are resampled; differencing across the kink
// would flag correct gradients.
struct GradCheckReport {
  int n_configs = 0;
  double max_rel_err = 0.0;
  double tol = 0.0;
  bool pass = false;
  std::vector<double> per_config;
};

GradCheckReport run_gradcheck(int n_configs, std::uint64_t seed, double eps, double tol);

}  // namespace metaopt
