#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "metaopt/baselines.hpp"
#include "metaopt/corruptions.hpp"
#include "metaopt/dataset.hpp"
#include "metaopt/inner_model.hpp"
#include "metaopt/learned_opt.hpp"
#include "metaopt/rng.hpp"

namespace metaopt {

// What the training minibatches look like: untouched, noised with one fixed
// corruption, or noised with a fresh draw from the training family per batch.
struct DataMode {
  enum Kind { kClean, kFixedSpec, kTrainFamily } kind = kClean;
  CorruptionSpec spec;    // kFixedSpec
  int max_severity = 3;   // kTrainFamily
  std::string label() const;
};

struct OptimizerSpec {
  enum Kind { kSgd, kAdam, kLearned } kind = kAdam;
  double lr = 1e-3;            // sgd / adam
  std::vector<double> theta;   // learned
  LearnedOptConfig learned_cfg;
  std::string label() const;   // e.g. "adam(0.001)", "sgd(0.1)", "learned"
};

struct InnerTrainConfig {
  std::int64_t steps = 2000;
  int batch = 16;
  std::int64_t log_every = 10;
  std::uint64_t seed = 0;
  DataMode data_mode;
};

struct CurvePoint {
  std::int64_t step = 0;
  double loss = 0.0;
  bool post_divergence = false;
};

struct EvalRun {
  std::string optimizer;
  std::string mode;
  std::vector<CurvePoint> curve;  // training loss every log_every steps
  std::vector<double> w;
  bool diverged = false;
  std::int64_t diverged_at = -1;
};

// Runs the inner loop exactly as a meta-training unroll does (same minibatch
// sampling, same learned step), minus the outer-loss evals and abort rule.
// A non-finite loss marks the run diverged, freezes the curve at log(K) and
// stops; it never throws.
EvalRun inner_train(const InnerModel& model, const ImageStore& train, const OptimizerSpec& opt,
                    const InnerTrainConfig& cfg, const SeverityTable& table = SeverityTable::builtin());

// Mean cross-entropy over the whole store under one corruption draw,
// streamed through fixed-size batches.
double eval_store_loss(const InnerModel& model, std::span<const double> w, const ImageStore& ds,
                       const CorruptionSpec& spec, const SeverityTable& table, Rng& rng,
                       int chunk = 64);

struct SweepStat {
  double mean = 0.0;
  double std_err = 0.0;  // over the rep means; 0 for deterministic corruptions
};

// reps independent corruption draws over the full store.
SweepStat eval_corrupted_loss(const InnerModel& model, std::span<const double> w,
                              const ImageStore& ds, const CorruptionSpec& spec,
                              const SeverityTable& table, int reps, Rng& rng);

struct SweepRow {
  std::string optimizer;
  std::string mode;
  std::string axis_kind;  // "gaussian_sigma" or a corruption name
  double axis_value = 0.0;
  double mean_loss = 0.0;
  double std_err = 0.0;
};

// Test loss as a function of additive Gaussian noise scale; sigma = 0 is the
// clean test loss exactly.
std::vector<SweepRow> eval_noise_sweep(const InnerModel& model, const EvalRun& run,
                                       const ImageStore& test, std::span<const double> sigmas,
                                       int reps, Rng& rng);

// Test loss per severity of one corruption kind; severity 0 means identity.
std::vector<SweepRow> eval_severity_sweep(const InnerModel& model, const EvalRun& run,
                                          const ImageStore& test, Corruption kind,
                                          std::span<const int> severities,
                                          const SeverityTable& table, int reps, Rng& rng);

std::vector<double> default_noise_sigmas();  // {0, 0.025, ..., 0.2}

// curves.csv: optimizer,mode,step,loss,diverged
// sweeps.csv: optimizer,mode,axis_kind,axis_value,mean_loss,stderr
void emit_report(std::span<const EvalRun> runs, std::span<const SweepRow> sweeps,
                 const std::string& out_dir);

struct GridPoint {
  int n = 0;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double final_clean_loss = 0.0;  // clean validation loss
  double final_eval_loss = 0.0;   // eval_spec-corrupted validation loss
  bool diverged = false;
};

struct GridSearchResult {
  std::vector<GridPoint> points;
  int best_n = 0;
  double best_alpha = 0.0;
  double best_score = 0.0;  // mean final_eval_loss over seeds at best_alpha
};

// One run per (alpha, seed); alpha scored by mean eval-corrupted validation
// loss over seeds, ties toward smaller alpha. An alpha with any diverged seed
// is not viable; if none are viable this throws.
GridSearchResult lr_grid_search(const InnerModel& model, const DatasetSplits& data,
                                OptimizerSpec::Kind kind, const InnerTrainConfig& base,
                                const CorruptionSpec& eval_spec, const SeverityTable& table,
                                std::span<const std::uint64_t> seeds, int n_lo = -12, int n_hi = 2,
                                int workers = 1);

void write_grid_csv(const std::string& path, std::span<const GridPoint> points);

}  // namespace metaopt
