#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "metaopt/config.hpp"
#include "metaopt/eval_harness.hpp"
#include "metaopt/image_io.hpp"
#include "metaopt/outer_trainer.hpp"
#include "metaopt/text_util.hpp"

namespace {

using namespace metaopt;

// Every flag is bound as a raw string and layered through the config store,
// so CLI > --config file > METAOPT_* env > defaults holds uniformly and the
// resolved_config.txt dump reproduces the run.
struct FlagBinder {
  CLI::App* sub = nullptr;
  std::vector<std::pair<CLI::Option*, std::string>> binds;

  void flag(const std::string& name, const std::string& key, const std::string& help) {
    auto* opt = sub->add_option(name)->description(help)->expected(1);
    binds.emplace_back(opt, key);
  }

  KeyValueConfig resolve(const KeyValueConfig& defaults) const {
    KeyValueConfig cli;
    for (const auto& [opt, key] : binds)
      if (opt->count() > 0) cli.set(key, opt->results().back());
    KeyValueConfig file;
    if (cli.has("config")) file = KeyValueConfig::from_file(cli.get("config", ""));
    cli.merge_under(file).merge_under(KeyValueConfig::from_env()).merge_under(defaults);
    return cli;
  }
};

FlagBinder make_binder(CLI::App& app, const std::string& name, const std::string& help) {
  FlagBinder b;
  b.sub = app.add_subcommand(name, help);
  b.flag("--config", "config", "key = value config file");
  return b;
}

std::string out_dir_of(const KeyValueConfig& r) {
  const std::string dir = r.get("out_dir", "out");
  std::filesystem::create_directories(dir);
  return dir;
}

void dump_resolved(const KeyValueConfig& r, const std::string& dir) {
  r.write(dir + "/resolved_config.txt");
}

DatasetSplits load_dataset(const KeyValueConfig& r) {
  const std::string ds = r.get("dataset", "toy");
  if (ds == "toy")
    return make_toy_dataset(static_cast<int>(r.get_int("toy_per_class", 40)),
                            static_cast<std::uint64_t>(r.get_int("toy_seed", 21)));
  if (ds == "cifar") return load_cifar10(r.get("data_dir", "data/cifar-10-batches-bin"));
  throw std::invalid_argument("dataset must be toy or cifar, got '" + ds + "'");
}

InnerModel::Config model_config_for(const KeyValueConfig& r, const DatasetSplits& data) {
  InnerModel::Config mc;
  mc.in_channels = data.train.channels();
  mc.height = data.train.height();
  mc.width = data.train.width();
  mc.n_classes = data.train.n_classes();
  if (r.get("dataset", "toy") == "toy") {
    mc.channels = {4, 4, 8, 8};
  } else {
    mc.channels = {32, 32, 64, 64};
  }
  mc.strides = {2, 2, 1, 1};
  mc.kernel = 3;
  return mc;
}

SeverityTable load_table(const KeyValueConfig& r) {
  const std::string path = r.get("severity_table", "");
  return path.empty() ? SeverityTable::builtin() : SeverityTable::load(path);
}

std::vector<std::uint64_t> resolve_seeds(const KeyValueConfig& r, int default_count) {
  if (r.has("seed")) return {static_cast<std::uint64_t>(r.get_int("seed", 0))};
  const std::string spec = r.get("seeds", std::to_string(default_count));
  if (spec.find(',') != std::string::npos) return parse_seed_list(spec);
  // a bare integer means "this many seeds, numbered from zero"
  std::size_t used = 0;
  long long n = 0;
  try {
    n = std::stoll(spec, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("seeds: need a positive count or a comma list, got '" + spec + "'");
  }
  if (used != spec.size() || n <= 0)
    throw std::invalid_argument("seeds: need a positive count or a comma list, got '" + spec + "'");
  std::vector<std::uint64_t> seeds;
  for (long long i = 0; i < n; ++i) seeds.push_back(static_cast<std::uint64_t>(i));
  return seeds;
}

DataMode resolve_data_mode(const KeyValueConfig& r) {
  const std::string mode = r.get("data_mode", "clean");
  if (mode == "clean") return {};
  if (mode == "noise")
    return {DataMode::kFixedSpec,
            {Corruption::kGaussianSigma, 0, r.get_double("noise_sigma", 0.05)},
            3};
  if (mode == "family")
    return {DataMode::kTrainFamily, {}, static_cast<int>(r.get_int("max_severity", 3))};
  throw std::invalid_argument("data_mode must be clean, noise or family, got '" + mode + "'");
}

OptimizerSpec resolve_optimizer(const KeyValueConfig& r) {
  OptimizerSpec opt;
  const std::string kind = r.get("optimizer", "adam");
  if (kind == "sgd")
    opt.kind = OptimizerSpec::kSgd;
  else if (kind == "adam")
    opt.kind = OptimizerSpec::kAdam;
  else if (kind == "learned")
    opt.kind = OptimizerSpec::kLearned;
  else
    throw std::invalid_argument("optimizer must be sgd, adam or learned, got '" + kind + "'");
  opt.lr = r.get_double("lr", 1e-3);
  if (opt.kind == OptimizerSpec::kLearned) {
    const std::string path = r.get("theta", "");
    if (path.empty()) throw std::invalid_argument("the learned optimizer needs --theta <checkpoint>");
    opt.theta = load_theta_checkpoint(path, opt.learned_cfg);
  }
  return opt;
}

InnerTrainConfig resolve_inner_cfg(const KeyValueConfig& r) {
  InnerTrainConfig cfg;
  cfg.steps = r.get_int("steps", 1000);
  cfg.batch = static_cast<int>(r.get_int("batch", 16));
  cfg.log_every = r.get_int("log_every", 10);
  cfg.seed = static_cast<std::uint64_t>(r.get_int("seed", 0));
  cfg.data_mode = resolve_data_mode(r);
  return cfg;
}

// ---------------------------------------------------------------- meta-train

int run_meta_train(const KeyValueConfig& r) {
  const std::string dir = out_dir_of(r);
  dump_resolved(r, dir);

  const std::string task = r.get("task", "toy");
  KeyValueConfig view = r;  // derive the dataset from the task unless forced
  if (!view.has("dataset")) view.set("dataset", task == "toy" ? "toy" : "cifar");
  const auto data = load_dataset(view);
  const InnerModel model(model_config_for(view, data));
  const auto table = load_table(r);

  OuterConfig cfg;
  cfg.pairs_per_batch = static_cast<int>(r.get_int("pairs_per_batch", cfg.pairs_per_batch));
  cfg.sigma_es = r.get_double("sigma_es", cfg.sigma_es);
  cfg.outer_adam.lr = r.get_double("outer_lr", cfg.outer_adam.lr);
  cfg.schedule.start = r.get_int("trunc_start", cfg.schedule.start);
  cfg.schedule.end = r.get_int("trunc_end", cfg.schedule.end);
  cfg.schedule.ramp = r.get_int("trunc_ramp", cfg.schedule.ramp);
  cfg.schedule.jitter = r.get_double("trunc_jitter", cfg.schedule.jitter);
  cfg.horizon = r.get_int("horizon", cfg.horizon);
  cfg.outer_iters = r.get_int("outer_iters", cfg.outer_iters);
  cfg.inner_batch = static_cast<int>(r.get_int("inner_batch", cfg.inner_batch));
  cfg.eval_batch = static_cast<int>(r.get_int("eval_batch", cfg.eval_batch));
  cfg.eval_every = static_cast<int>(r.get_int("eval_every", cfg.eval_every));
  cfg.abort_factor = r.get_double("abort_factor", cfg.abort_factor);
  cfg.workers = static_cast<int>(r.get_int("workers", cfg.workers));
  const std::string mode = r.get("mode", "sync");
  if (mode != "sync" && mode != "async")
    throw std::invalid_argument("mode must be sync or async, got '" + mode + "'");
  cfg.async = mode == "async";
  cfg.max_staleness = static_cast<int>(r.get_int("max_staleness", cfg.max_staleness));

  if (task == "toy" || task == "gaussian") {
    cfg.sample_corruptions = false;
    cfg.fixed_corruption = {Corruption::kGaussianSigma, 0, r.get_double("noise_sigma", 0.05)};
  } else if (task == "corruption") {
    cfg.sample_corruptions = true;
    cfg.max_severity = static_cast<int>(r.get_int("max_severity", 3));
  } else {
    throw std::invalid_argument("task must be toy, gaussian or corruption, got '" + task + "'");
  }

  const auto seeds = resolve_seeds(r, task == "corruption" ? 4 : 3);
  const bool quiet = r.get_bool("quiet", false);
  const auto ckpt_every = r.get_int("ckpt_every", 500);

  std::vector<std::vector<OuterLogRow>> logs;
  for (const auto seed : seeds) {
    OuterConfig seeded = cfg;
    seeded.seed = seed;
    OuterTrainer seeded_trainer(model, data, seeded, table);
    Rng theta_rng(mix64(seed) ^ 0x7468657461ULL);
    const auto theta0 = seeded_trainer.optimizer().init_theta(theta_rng);

    const std::string tag = std::to_string(seed);
    const std::string ckpt_path = dir + "/theta_seed" + tag + ".ckpt";
    const auto res = seeded_trainer.train(
        theta0, [&](const OuterLogRow& row, std::span<const double> theta) {
          if (!quiet && (row.outer_iter + 1) % 100 == 0)
            std::printf("seed %llu iter %lld trunc %.1f outer loss %.4f aborts %lld\n",
                        static_cast<unsigned long long>(seed),
                        static_cast<long long>(row.outer_iter), row.trunc_len,
                        row.mean_outer_loss, static_cast<long long>(row.n_aborts));
          if (ckpt_every > 0 && (row.outer_iter + 1) % ckpt_every == 0)
            save_theta_checkpoint(ckpt_path, theta, seeded_trainer.optimizer().config());
        });

    write_outer_log_csv(dir + "/outer_log_seed" + tag + ".csv", res.log);
    save_theta_checkpoint(ckpt_path, res.theta, seeded_trainer.optimizer().config());
    logs.push_back(res.log);
  }

  const int best = select_best_seed(logs, static_cast<int>(r.get_int("best_last_k", 10)));
  double tail = 0.0;
  {
    const auto& log = logs[static_cast<std::size_t>(best)];
    const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(r.get_int("best_last_k", 10)), log.size());
    for (std::size_t i = log.size() - k; i < log.size(); ++i) tail += log[i].mean_outer_loss;
    tail /= static_cast<double>(k);
  }
  {
    std::ofstream out(dir + "/best_seed.txt");
    out << "seed " << seeds[static_cast<std::size_t>(best)] << '\n'
        << "checkpoint theta_seed" << seeds[static_cast<std::size_t>(best)] << ".ckpt\n"
        << "tail_mean_outer_loss " << fmt_g17(tail) << '\n';
  }
  std::printf("best seed %llu (tail outer loss %.6f), artifacts in %s\n",
              static_cast<unsigned long long>(seeds[static_cast<std::size_t>(best)]), tail,
              dir.c_str());
  return 0;
}

// ---------------------------------------------------------------- inner-train

int run_inner_train(const KeyValueConfig& r) {
  const std::string dir = out_dir_of(r);
  dump_resolved(r, dir);

  const auto data = load_dataset(r);
  const InnerModel model(model_config_for(r, data));
  const auto table = load_table(r);
  const auto opt = resolve_optimizer(r);
  const auto cfg = resolve_inner_cfg(r);

  const auto run = inner_train(model, data.train, opt, cfg, table);
  emit_report(std::vector<EvalRun>{run}, {}, dir);

  Rng eval_rng(mix64(cfg.seed) ^ 0x6576616cULL);
  const CorruptionSpec identity{Corruption::kIdentity, 0, 0.0};
  const CorruptionSpec noised{Corruption::kGaussianSigma, 0, r.get_double("noise_sigma", 0.05)};
  const double clean_valid = eval_store_loss(model, run.w, data.valid, identity, table, eval_rng);
  const auto noised_valid =
      eval_corrupted_loss(model, run.w, data.valid, noised, table,
                          static_cast<int>(r.get_int("reps", 8)), eval_rng);
  std::printf("%s %s: diverged=%d final train loss %.6f clean valid %.6f noised valid %.6f +- %.6f\n",
              run.optimizer.c_str(), run.mode.c_str(), run.diverged ? 1 : 0,
              run.curve.empty() ? 0.0 : run.curve.back().loss, clean_valid, noised_valid.mean,
              noised_valid.std_err);
  return 0;
}

// ---------------------------------------------------------------- evaluate

int run_evaluate(const KeyValueConfig& r) {
  const std::string dir = out_dir_of(r);
  dump_resolved(r, dir);

  const auto data = load_dataset(r);
  const InnerModel model(model_config_for(r, data));
  const auto table = load_table(r);
  const auto opt = resolve_optimizer(r);
  const auto cfg = resolve_inner_cfg(r);
  const int reps = static_cast<int>(r.get_int("reps", 8));

  const auto run = inner_train(model, data.train, opt, cfg, table);

  std::vector<SweepRow> sweeps;
  Rng sweep_rng(mix64(cfg.seed) ^ 0x7377656570ULL);
  const std::string sweep = r.get("sweep", "noise");
  if (sweep == "noise") {
    std::vector<double> sigmas = default_noise_sigmas();
    if (r.has("sigmas")) sigmas = parse_double_list(r.get("sigmas", ""));
    sweeps = eval_noise_sweep(model, run, data.test, sigmas, reps, sweep_rng);
  } else if (sweep == "severity") {
    const auto kind = corruption_from_name(r.get("kind", "gaussian_noise"));
    std::vector<int> sevs{0, 1, 2, 3, 4, 5};
    if (r.has("severities")) {
      sevs.clear();
      for (const auto s : parse_seed_list(r.get("severities", "")))
        sevs.push_back(static_cast<int>(s));
    }
    sweeps = eval_severity_sweep(model, run, data.test, kind, sevs, table, reps, sweep_rng);
  } else {
    throw std::invalid_argument("sweep must be noise or severity, got '" + sweep + "'");
  }

  emit_report(std::vector<EvalRun>{run}, sweeps, dir);
  for (const auto& row : sweeps)
    std::printf("%s %s %s=%g loss %.6f +- %.6f\n", row.optimizer.c_str(), row.mode.c_str(),
                row.axis_kind.c_str(), row.axis_value, row.mean_loss, row.std_err);
  return 0;
}

// ---------------------------------------------------------------- grid-search

int run_grid_search(const KeyValueConfig& r) {
  const std::string dir = out_dir_of(r);
  dump_resolved(r, dir);

  const auto data = load_dataset(r);
  const InnerModel model(model_config_for(r, data));
  const auto table = load_table(r);

  const std::string kind_name = r.get("optimizer", "adam");
  OptimizerSpec::Kind kind;
  if (kind_name == "sgd")
    kind = OptimizerSpec::kSgd;
  else if (kind_name == "adam")
    kind = OptimizerSpec::kAdam;
  else
    throw std::invalid_argument("grid-search tunes sgd or adam, got '" + kind_name + "'");

  InnerTrainConfig base = resolve_inner_cfg(r);

  CorruptionSpec eval_spec{Corruption::kIdentity, 0, 0.0};
  const std::string target = r.get("eval_mode", "noise");
  if (target == "noise")
    eval_spec = {Corruption::kGaussianSigma, 0, r.get_double("noise_sigma", 0.05)};
  else if (target == "corruption")
    eval_spec = {corruption_from_name(r.get("kind", "gaussian_noise")),
                 static_cast<int>(r.get_int("severity", 3)), 0.0};
  else if (target != "clean")
    throw std::invalid_argument("eval_mode must be clean, noise or corruption");

  const auto seeds = resolve_seeds(r, 3);
  const auto res = lr_grid_search(model, data, kind, base, eval_spec, table, seeds,
                                  static_cast<int>(r.get_int("n_lo", -12)),
                                  static_cast<int>(r.get_int("n_hi", 2)),
                                  static_cast<int>(r.get_int("workers", 1)));
  write_grid_csv(dir + "/grid.csv", res.points);
  std::printf("best n %d alpha %.6g mean eval loss %.6f\n", res.best_n, res.best_alpha,
              res.best_score);
  return 0;
}

// ---------------------------------------------------------------- corrupt

int run_corrupt(const KeyValueConfig& r) {
  const std::string in_path = r.get("in", "");
  const std::string out_path = r.get("out", "");
  if (in_path.empty() || out_path.empty())
    throw std::invalid_argument("corrupt needs --in and --out ppm paths");
  const auto table = load_table(r);

  CorruptionSpec spec;
  spec.kind = corruption_from_name(r.get("kind", "gaussian_noise"));
  spec.severity = static_cast<int>(r.get_int("severity", 3));
  spec.sigma = r.get_double("noise_sigma", 0.05);

  const auto img = read_ppm(in_path);
  Tensor out(img.shape);
  Rng rng(static_cast<std::uint64_t>(r.get_int("seed", 0)));
  apply_corruption(spec, table, static_cast<int>(img.dim(0)), static_cast<int>(img.dim(1)),
                   static_cast<int>(img.dim(2)), img.data, out.data, rng);
  write_ppm(out_path, out);
  std::printf("%s -> %s (%s)\n", in_path.c_str(), out_path.c_str(),
              corruption_name(spec.kind));
  return 0;
}

// ---------------------------------------------------------------- gradcheck

int run_gradcheck_cmd(const KeyValueConfig& r) {
  const auto report = run_gradcheck(static_cast<int>(r.get_int("configs", 20)),
                                    static_cast<std::uint64_t>(r.get_int("seed", 0)),
                                    r.get_double("eps", 1e-5), r.get_double("tol", 1e-6));
  for (std::size_t i = 0; i < report.per_config.size(); ++i)
    std::printf("config %zu rel err %.3e\n", i, report.per_config[i]);
  std::printf("max rel err %.3e over %d configs (tol %.1e): %s\n", report.max_rel_err,
              report.n_configs, report.tol, report.pass ? "ok" : "FAILED");
  return report.pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"per-parameter learned optimizer: meta-training and evaluation"};
  app.require_subcommand(1);

  auto mt = make_binder(app, "meta-train", "meta-train the update rule with truncated antithetic ES");
  for (const auto& [f, k, h] : std::vector<std::tuple<std::string, std::string, std::string>>{
           {"--task", "task", "toy | gaussian | corruption"},
           {"--dataset", "dataset", "toy | cifar (defaults to the task's natural dataset)"},
           {"--data-dir", "data_dir", "CIFAR-10 binary batch directory"},
           {"--out-dir", "out_dir", "artifact directory"},
           {"--seed", "seed", "single seed"},
           {"--seeds", "seeds", "seed count or comma list"},
           {"--outer-iters", "outer_iters", "outer training iterations"},
           {"--pairs", "pairs_per_batch", "antithetic pairs per outer batch"},
           {"--sigma-es", "sigma_es", "ES perturbation scale"},
           {"--outer-lr", "outer_lr", "outer Adam learning rate"},
           {"--trunc-start", "trunc_start", "truncation schedule start"},
           {"--trunc-end", "trunc_end", "truncation schedule end"},
           {"--trunc-ramp", "trunc_ramp", "iterations to ramp start->end"},
           {"--trunc-jitter", "trunc_jitter", "multiplicative length jitter"},
           {"--horizon", "horizon", "inner steps before an unroll restarts"},
           {"--inner-batch", "inner_batch", "inner minibatch size"},
           {"--eval-batch", "eval_batch", "outer-loss minibatch size"},
           {"--eval-every", "eval_every", "inner steps between outer evals"},
           {"--abort-factor", "abort_factor", "abort at factor x initial outer loss"},
           {"--workers", "workers", "thread count"},
           {"--mode", "mode", "sync | async"},
           {"--max-staleness", "max_staleness", "async: drop older contributions"},
           {"--noise-sigma", "noise_sigma", "outer-objective gaussian sigma"},
           {"--max-severity", "max_severity", "corruption task: severity cap"},
           {"--severity-table", "severity_table", "severity table file"},
           {"--toy-per-class", "toy_per_class", "toy dataset size per class"},
           {"--toy-seed", "toy_seed", "toy dataset generation seed"},
           {"--best-last-k", "best_last_k", "log tail length for best-seed pick"},
           {"--ckpt-every", "ckpt_every", "outer iterations between rolling checkpoints"},
           {"--quiet", "quiet", "suppress progress lines (true/false)"}})
    mt.flag(f, k, h);

  auto it = make_binder(app, "inner-train", "train one inner model and record its loss curve");
  auto ev = make_binder(app, "evaluate", "train one inner model, then sweep noise or severity");
  for (auto* b : {&it, &ev}) {
    for (const auto& [f, k, h] : std::vector<std::tuple<std::string, std::string, std::string>>{
             {"--dataset", "dataset", "toy | cifar"},
             {"--data-dir", "data_dir", "CIFAR-10 binary batch directory"},
             {"--out-dir", "out_dir", "artifact directory"},
             {"--optimizer", "optimizer", "sgd | adam | learned"},
             {"--lr", "lr", "sgd/adam learning rate"},
             {"--theta", "theta", "learned-optimizer checkpoint"},
             {"--steps", "steps", "inner training steps"},
             {"--batch", "batch", "minibatch size"},
             {"--log-every", "log_every", "curve sampling stride"},
             {"--seed", "seed", "training seed"},
             {"--data-mode", "data_mode", "clean | noise | family"},
             {"--noise-sigma", "noise_sigma", "gaussian sigma for noise mode / eval"},
             {"--max-severity", "max_severity", "family mode severity cap"},
             {"--severity-table", "severity_table", "severity table file"},
             {"--toy-per-class", "toy_per_class", "toy dataset size per class"},
             {"--toy-seed", "toy_seed", "toy dataset generation seed"},
             {"--reps", "reps", "evaluation noise draws"}})
      b->flag(f, k, h);
  }
  ev.flag("--sweep", "sweep", "noise | severity");
  ev.flag("--sigmas", "sigmas", "comma list of noise scales");
  ev.flag("--kind", "kind", "corruption kind for severity sweeps");
  ev.flag("--severities", "severities", "comma list of severities (0 = clean)");

  auto gs = make_binder(app, "grid-search", "learning-rate grid search for sgd or adam");
  for (const auto& [f, k, h] : std::vector<std::tuple<std::string, std::string, std::string>>{
           {"--dataset", "dataset", "toy | cifar"},
           {"--data-dir", "data_dir", "CIFAR-10 binary batch directory"},
           {"--out-dir", "out_dir", "artifact directory"},
           {"--optimizer", "optimizer", "sgd | adam"},
           {"--steps", "steps", "inner training steps"},
           {"--batch", "batch", "minibatch size"},
           {"--log-every", "log_every", "curve sampling stride"},
           {"--seeds", "seeds", "seed count or comma list"},
           {"--seed", "seed", "single seed"},
           {"--eval-mode", "eval_mode", "clean | noise | corruption"},
           {"--noise-sigma", "noise_sigma", "gaussian sigma for noise scoring"},
           {"--kind", "kind", "corruption kind for corruption scoring"},
           {"--severity", "severity", "corruption severity for scoring"},
           {"--n-lo", "n_lo", "smallest grid exponent (alpha = 10^(n/2))"},
           {"--n-hi", "n_hi", "largest grid exponent"},
           {"--workers", "workers", "thread count"},
           {"--severity-table", "severity_table", "severity table file"},
           {"--toy-per-class", "toy_per_class", "toy dataset size per class"},
           {"--toy-seed", "toy_seed", "toy dataset generation seed"}})
    gs.flag(f, k, h);

  auto co = make_binder(app, "corrupt", "apply one corruption to a ppm image");
  for (const auto& [f, k, h] : std::vector<std::tuple<std::string, std::string, std::string>>{
           {"--in", "in", "input ppm"},
           {"--out", "out", "output ppm"},
           {"--kind", "kind", "corruption kind"},
           {"--severity", "severity", "severity 1-5"},
           {"--noise-sigma", "noise_sigma", "sigma for gaussian_sigma"},
           {"--seed", "seed", "corruption seed"},
           {"--severity-table", "severity_table", "severity table file"}})
    co.flag(f, k, h);

  auto gc = make_binder(app, "gradcheck", "finite-difference check of the model gradients");
  for (const auto& [f, k, h] : std::vector<std::tuple<std::string, std::string, std::string>>{
           {"--configs", "configs", "number of random model configurations"},
           {"--seed", "seed", "configuration seed"},
           {"--eps", "eps", "finite-difference step"},
           {"--tol", "tol", "relative-error tolerance"}})
    gc.flag(f, k, h);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // help exits clean, usage errors exit 2
  }

  try {
    KeyValueConfig defaults;
    if (mt.sub->parsed()) return run_meta_train(mt.resolve(defaults));
    if (it.sub->parsed()) return run_inner_train(it.resolve(defaults));
    if (ev.sub->parsed()) return run_evaluate(ev.resolve(defaults));
    if (gs.sub->parsed()) return run_grid_search(gs.resolve(defaults));
    if (co.sub->parsed()) return run_corrupt(co.resolve(defaults));
    if (gc.sub->parsed()) return run_gradcheck_cmd(gc.resolve(defaults));
    std::fprintf(stderr, "error: no subcommand\n");
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
