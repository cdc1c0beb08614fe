#include "metaopt/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "metaopt/text_util.hpp"
#include "metaopt/thread_pool.hpp"

namespace metaopt {

namespace {

std::string fmt_short(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string spec_label(const CorruptionSpec& spec) {
  const std::string name = corruption_name(spec.kind);
  if (spec.kind == Corruption::kGaussianSigma) return name + "(" + fmt_short(spec.sigma) + ")";
  if (spec.kind == Corruption::kIdentity) return name;
  return name + "@" + std::to_string(spec.severity);
}

}  // namespace

std::string DataMode::label() const {
  switch (kind) {
    case kClean:
      return "clean";
    case kFixedSpec:
      return spec_label(spec);
    case kTrainFamily:
      return "train_family(max_sev=" + std::to_string(max_severity) + ")";
  }
  throw std::logic_error("DataMode: bad kind");
}

std::string OptimizerSpec::label() const {
  switch (kind) {
    case kSgd:
      return "sgd(" + fmt_short(lr) + ")";
    case kAdam:
      return "adam(" + fmt_short(lr) + ")";
    case kLearned:
      return "learned";
  }
  throw std::logic_error("OptimizerSpec: bad kind");
}

EvalRun inner_train(const InnerModel& model, const ImageStore& train, const OptimizerSpec& opt,
                    const InnerTrainConfig& cfg, const SeverityTable& table) {
  if (cfg.steps < 1 || cfg.batch < 1 || cfg.log_every < 1)
    throw std::invalid_argument("inner_train: steps, batch and log_every must be positive");
  if (opt.kind != OptimizerSpec::kLearned && opt.lr <= 0.0)
    throw std::invalid_argument("inner_train: learning rate must be positive");

  LearnedOptimizer lopt(opt.learned_cfg);
  if (opt.kind == OptimizerSpec::kLearned &&
      static_cast<std::int64_t>(opt.theta.size()) != lopt.theta_dim())
    throw std::invalid_argument("inner_train: theta does not match the update-rule sizes");

  EvalRun run;
  run.optimizer = opt.label();
  run.mode = cfg.data_mode.label();

  Rng rng(mix64(cfg.seed) ^ 0x696e6e65725f7472ULL);
  run.w = model.init_params(rng);

  InnerWorkspace ws;
  std::vector<double> grad(static_cast<std::size_t>(model.n_params()));
  LearnedOptState lstate(model.layout(), opt.learned_cfg);
  AdamState adam(model.n_params(), AdamConfig{opt.lr, 0.9, 0.999, 1e-8});

  const double lnk = std::log(static_cast<double>(model.config().n_classes));
  ImageBatch batch;
  double last_loss = lnk;
  for (std::int64_t s = 1; s <= cfg.steps; ++s) {
    if (!run.diverged) {
      sample_minibatch(train, cfg.batch, rng, batch);
      switch (cfg.data_mode.kind) {
        case DataMode::kClean:
          break;
        case DataMode::kFixedSpec:
          corrupt_batch(cfg.data_mode.spec, table, batch, rng);
          break;
        case DataMode::kTrainFamily:
          corrupt_batch(sample_train_corruption(rng, cfg.data_mode.max_severity), table, batch,
                        rng);
          break;
      }
      double loss;
      if (opt.kind == OptimizerSpec::kLearned) {
        loss = learned_inner_step(model, batch, lopt, opt.theta, lstate, run.w, grad, ws);
      } else {
        loss = model.loss_and_grad(run.w, batch, grad, ws);
        if (opt.kind == OptimizerSpec::kSgd)
          sgd_step(run.w, grad, opt.lr);
        else
          adam.step(run.w, grad);
      }
      if (!std::isfinite(loss) || !all_finite(run.w)) {
        run.diverged = true;
        run.diverged_at = s;
      } else {
        last_loss = loss;
      }
    }
    if (s % cfg.log_every == 0)
      run.curve.push_back({s, run.diverged ? lnk : last_loss, run.diverged});
  }
  return run;
}

double eval_store_loss(const InnerModel& model, std::span<const double> w, const ImageStore& ds,
                       const CorruptionSpec& spec, const SeverityTable& table, Rng& rng,
                       int chunk) {
  if (ds.size() == 0) throw std::invalid_argument("eval_store_loss: empty store");
  if (chunk < 1) throw std::invalid_argument("eval_store_loss: chunk must be positive");
  const auto elems = ds.image_elems();
  InnerWorkspace ws;
  ImageBatch batch;
  double total = 0.0;
  for (std::int64_t start = 0; start < ds.size(); start += chunk) {
    const int b = static_cast<int>(std::min<std::int64_t>(chunk, ds.size() - start));
    batch.x = Tensor({b, ds.channels(), ds.height(), ds.width()});
    batch.labels.resize(static_cast<std::size_t>(b));
    for (int i = 0; i < b; ++i) {
      ds.copy_image(start + i, batch.x.data.data() + static_cast<std::int64_t>(i) * elems);
      batch.labels[static_cast<std::size_t>(i)] = ds.label(start + i);
    }
    corrupt_batch(spec, table, batch, rng);
    total += model.loss(w, batch, ws) * b;
  }
  return total / static_cast<double>(ds.size());
}

SweepStat eval_corrupted_loss(const InnerModel& model, std::span<const double> w,
                              const ImageStore& ds, const CorruptionSpec& spec,
                              const SeverityTable& table, int reps, Rng& rng) {
  if (reps < 1) throw std::invalid_argument("eval_corrupted_loss: reps must be positive");
  std::vector<double> losses(static_cast<std::size_t>(reps));
  for (int r = 0; r < reps; ++r) losses[static_cast<std::size_t>(r)] = eval_store_loss(model, w, ds, spec, table, rng);
  SweepStat st;
  for (double l : losses) st.mean += l;
  st.mean /= reps;
  if (reps > 1) {
    double ss = 0.0;
    for (double l : losses) ss += (l - st.mean) * (l - st.mean);
    st.std_err = std::sqrt(ss / (reps - 1)) / std::sqrt(static_cast<double>(reps));
  }
  return st;
}

std::vector<SweepRow> eval_noise_sweep(const InnerModel& model, const EvalRun& run,
                                       const ImageStore& test, std::span<const double> sigmas,
                                       int reps, Rng& rng) {
  const double lnk = std::log(static_cast<double>(model.config().n_classes));
  std::vector<SweepRow> rows;
  rows.reserve(sigmas.size());
  for (double sigma : sigmas) {
    if (sigma < 0.0) throw std::invalid_argument("eval_noise_sweep: negative sigma");
    SweepRow row;
    row.optimizer = run.optimizer;
    row.mode = run.mode;
    row.axis_kind = "gaussian_sigma";
    row.axis_value = sigma;
    if (run.diverged) {
      row.mean_loss = lnk;
      row.std_err = 0.0;
    } else {
      CorruptionSpec spec{Corruption::kGaussianSigma, 0, sigma};
      const auto st = eval_corrupted_loss(model, run.w, test, spec, SeverityTable::builtin(), reps, rng);
      row.mean_loss = st.mean;
      row.std_err = st.std_err;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<SweepRow> eval_severity_sweep(const InnerModel& model, const EvalRun& run,
                                          const ImageStore& test, Corruption kind,
                                          std::span<const int> severities,
                                          const SeverityTable& table, int reps, Rng& rng) {
  const double lnk = std::log(static_cast<double>(model.config().n_classes));
  std::vector<SweepRow> rows;
  rows.reserve(severities.size());
  for (int sev : severities) {
    if (sev < 0 || sev > 5) throw std::invalid_argument("eval_severity_sweep: severity out of range");
    SweepRow row;
    row.optimizer = run.optimizer;
    row.mode = run.mode;
    row.axis_kind = corruption_name(kind);
    row.axis_value = sev;
    if (run.diverged) {
      row.mean_loss = lnk;
      row.std_err = 0.0;
    } else {
      const CorruptionSpec spec = sev == 0 ? CorruptionSpec{Corruption::kIdentity, 0, 0.0}
                                           : CorruptionSpec{kind, sev, 0.0};
      const auto st = eval_corrupted_loss(model, run.w, test, spec, table, reps, rng);
      row.mean_loss = st.mean;
      row.std_err = st.std_err;
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> default_noise_sigmas() {
  std::vector<double> s;
  for (int i = 0; i <= 8; ++i) s.push_back(0.025 * i);
  return s;
}

void emit_report(std::span<const EvalRun> runs, std::span<const SweepRow> sweeps,
                 const std::string& out_dir) {
  {
    const std::string path = out_dir + "/curves.csv";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "optimizer,mode,step,loss,diverged\n";
    for (const auto& run : runs)
      for (const auto& p : run.curve)
        out << run.optimizer << ',' << run.mode << ',' << p.step << ',' << fmt_g17(p.loss) << ','
            << (p.post_divergence ? 1 : 0) << '\n';
    if (!out) throw std::runtime_error("short write on " + path);
  }
  {
    const std::string path = out_dir + "/sweeps.csv";
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "optimizer,mode,axis_kind,axis_value,mean_loss,stderr\n";
    for (const auto& row : sweeps)
      out << row.optimizer << ',' << row.mode << ',' << row.axis_kind << ','
          << fmt_g17(row.axis_value) << ',' << fmt_g17(row.mean_loss) << ','
          << fmt_g17(row.std_err) << '\n';
    if (!out) throw std::runtime_error("short write on " + path);
  }
}

GridSearchResult lr_grid_search(const InnerModel& model, const DatasetSplits& data,
                                OptimizerSpec::Kind kind, const InnerTrainConfig& base,
                                const CorruptionSpec& eval_spec, const SeverityTable& table,
                                std::span<const std::uint64_t> seeds, int n_lo, int n_hi,
                                int workers) {
  if (kind == OptimizerSpec::kLearned)
    throw std::invalid_argument("lr_grid_search: only sgd and adam take a learning rate");
  if (seeds.empty()) throw std::invalid_argument("lr_grid_search: need at least one seed");
  if (n_hi < n_lo) throw std::invalid_argument("lr_grid_search: empty grid");
  if (data.valid.size() == 0) throw std::invalid_argument("lr_grid_search: empty validation split");

  const double lnk = std::log(static_cast<double>(model.config().n_classes));
  const int n_alphas = n_hi - n_lo + 1;
  const int n_runs = n_alphas * static_cast<int>(seeds.size());

  GridSearchResult res;
  res.points.resize(static_cast<std::size_t>(n_runs));
  auto run_one = [&](int idx) {
    const int a = idx / static_cast<int>(seeds.size());
    const int si = idx % static_cast<int>(seeds.size());
    const int n = n_lo + a;
    const double alpha = std::pow(10.0, 0.5 * n);

    OptimizerSpec opt;
    opt.kind = kind;
    opt.lr = alpha;
    InnerTrainConfig cfg = base;
    cfg.seed = seeds[static_cast<std::size_t>(si)];
    const auto run = inner_train(model, data.train, opt, cfg, table);

    GridPoint& pt = res.points[static_cast<std::size_t>(idx)];
    pt.n = n;
    pt.alpha = alpha;
    pt.seed = cfg.seed;
    pt.diverged = run.diverged;
    if (run.diverged) {
      pt.final_clean_loss = lnk;
      pt.final_eval_loss = lnk;
    } else {
      // fresh streams per run so evaluation noise is independent of grid shape
      Rng eval_rng(mix64(cfg.seed) ^ mix64(static_cast<std::uint64_t>(n + 1000)));
      CorruptionSpec identity{Corruption::kIdentity, 0, 0.0};
      pt.final_clean_loss = eval_store_loss(model, run.w, data.valid, identity, table, eval_rng);
      pt.final_eval_loss = eval_store_loss(model, run.w, data.valid, eval_spec, table, eval_rng);
    }
  };

  if (workers > 1) {
    ThreadPool pool(workers);
    pool.parallel_for(n_runs, run_one);
  } else {
    for (int i = 0; i < n_runs; ++i) run_one(i);
  }

  bool found = false;
  for (int a = 0; a < n_alphas; ++a) {
    double score = 0.0;
    bool viable = true;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const auto& pt = res.points[static_cast<std::size_t>(a) * seeds.size() + si];
      viable = viable && !pt.diverged;
      score += pt.final_eval_loss;
    }
    score /= static_cast<double>(seeds.size());
    if (viable && (!found || score < res.best_score)) {
      found = true;
      res.best_n = n_lo + a;
      res.best_alpha = std::pow(10.0, 0.5 * (n_lo + a));
      res.best_score = score;
    }
  }
  if (!found) throw std::runtime_error("lr_grid_search: every learning rate diverged");
  return res;
}

void write_grid_csv(const std::string& path, std::span<const GridPoint> points) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << "n,alpha,seed,final_clean_loss,final_eval_loss\n";
  for (const auto& p : points)
    out << p.n << ',' << fmt_g17(p.alpha) << ',' << p.seed << ',' << fmt_g17(p.final_clean_loss)
        << ',' << fmt_g17(p.final_eval_loss) << '\n';
  if (!out) throw std::runtime_error("short write on " + path);
}

}  // namespace metaopt
