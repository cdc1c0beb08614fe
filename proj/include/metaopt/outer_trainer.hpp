#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "metaopt/baselines.hpp"
#include "metaopt/corruptions.hpp"
#include "metaopt/dataset.hpp"
#include "metaopt/learned_opt.hpp"
#include "metaopt/rng.hpp"
#include "metaopt/thread_pool.hpp"

namespace metaopt {

struct TruncationSchedule {
  std::int64_t start = 100;
  std::int64_t end = 10000;
  std::int64_t ramp = 5000;  // outer iterations over which start ramps to end
  double jitter = 0.2;       // multiplicative, uniform in [1-j, 1+j]
};

// Linear ramp then plateau, jittered. Always consumes exactly one uniform
// draw so the caller's stream position does not depend on the jitter setting.
std::int64_t truncation_length(const TruncationSchedule& s, std::int64_t outer_iter, Rng& rng);

struct OuterConfig {
  int pairs_per_batch = 16;
  double sigma_es = 0.01;
  AdamConfig outer_adam{0.003, 0.9, 0.999, 1e-8};
  TruncationSchedule schedule{10, 30, 2000, 0.2};
  std::int64_t horizon = 1000;  // inner steps before an unroll restarts fresh
  std::int64_t outer_iters = 2000;
  int inner_batch = 16;
  int eval_batch = 16;
  int eval_every = 10;        // inner steps between outer-loss measurements
  double abort_factor = 2.0;  // vs the unroll's initial outer loss
  int workers = 1;
  bool async = false;
  int max_staleness = 4;  // async only: drop contributions older than this many steps
  // Validation noising: either one fixed spec, or a fresh draw from the
  // 7-corruption training family at every outer-loss evaluation.
  bool sample_corruptions = false;
  int max_severity = 3;
  CorruptionSpec fixed_corruption{Corruption::kGaussianSigma, 0, 0.05};
  std::uint64_t seed = 0;
};

// A persistent inner problem: model weights, optimizer state, a private rng
// stream and the corruption its outer loss is measured under. Copyable, and
// a copy replays identically - that is what makes antithetic pairs share
// their randomness.
struct UnrollState {
  UnrollState(const ParamLayout& layout, LearnedOptConfig cfg, Rng r)
      : opt_state(layout, std::move(cfg)), rng(r) {}

  std::vector<double> w;
  LearnedOptState opt_state;
  Rng rng;
  CorruptionSpec corruption;
  double initial_outer_loss = 0.0;
  std::int64_t steps_done = 0;
};

struct TruncationResult {
  double mean_outer_loss = 0.0;
  int n_evals = 0;
  int n_aborts = 0;
};

struct OuterLogRow {
  std::int64_t outer_iter = 0;
  double wall_seconds = 0.0;
  double trunc_len = 0.0;  // mean over the batch (jitter makes it fractional)
  double mean_outer_loss = 0.0;
  std::int64_t n_aborts = 0;
};

void write_outer_log_csv(const std::string& path, std::span<const OuterLogRow> rows);

struct OuterResult {
  std::vector<double> theta;
  std::vector<OuterLogRow> log;
};

class OuterTrainer {
 public:
  OuterTrainer(const InnerModel& model, const DatasetSplits& data, OuterConfig cfg,
               const SeverityTable& table = SeverityTable::builtin());

  const LearnedOptimizer& optimizer() const { return opt_; }
  const OuterConfig& config() const { return cfg_; }

  // Fresh unroll: He-init weights, reset optimizer state, (re)drawn
  // corruption, and the initial outer loss the abort rule compares against.
  UnrollState make_state(Rng rng, InnerWorkspace& ws) const;
  void reinit_state(UnrollState& state, InnerWorkspace& ws) const;

  // Corrupted-validation loss of the state's current weights; consumes draws
  // from the state's rng for the minibatch and the corruption. In
  // family-sampling mode each call also redraws state.corruption.
  double outer_loss(UnrollState& state, InnerWorkspace& ws) const;

  // Advances the unroll len steps under theta, measuring the outer loss every
  // eval_every steps and at the end. An eval above abort_factor x initial (or
  // non-finite) records the abort threshold as that eval's loss and restarts
  // the unroll.
  TruncationResult run_truncation(std::span<const double> theta, UnrollState& state,
                                  std::int64_t len, InnerWorkspace& ws,
                                  std::vector<double>& grad_buf) const;

  // Called after every outer Adam step with the log row and the current
  // theta, so callers can print progress and write periodic checkpoints.
  using IterCallback = std::function<void(const OuterLogRow&, std::span<const double>)>;

  // Meta-trains theta0. Synchronous mode is bitwise deterministic for a given
  // (seed, config) regardless of worker count; async mode trades that for
  // hardware utilization and only promises a finite result.
  OuterResult train(std::span<const double> theta0, const IterCallback& on_iter = nullptr) const;

 private:
  OuterResult train_sync(std::span<const double> theta0, const IterCallback& on_iter) const;
  OuterResult train_async(std::span<const double> theta0, const IterCallback& on_iter) const;

  const InnerModel* model_;
  const DatasetSplits* data_;
  OuterConfig cfg_;
  const SeverityTable* table_;
  LearnedOptimizer opt_;
};

// Antithetic ES estimate of the gradient of f at theta:
//   mean over pairs of eps * (f(theta + sigma eps) - f(theta - sigma eps)) / (2 sigma).
// f is called once per side with the pair index so callers can tie shared
// randomness to the pair. Throws if f returns a non-finite value.
using EsObjective = std::function<double(int pair, std::span<const double> point, bool positive)>;
std::vector<double> es_gradient(const EsObjective& f, std::span<const double> theta, double sigma,
                                int pairs, Rng& master, ThreadPool* pool = nullptr);

// Index of the seed whose log has the lowest mean outer loss over its last
// last_k rows; ties go to the lower index.
int select_best_seed(const std::vector<std::vector<OuterLogRow>>& logs, int last_k = 10);

}  // namespace metaopt
