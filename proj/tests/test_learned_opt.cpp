#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "metaopt/dataset.hpp"
#include "metaopt/learned_opt.hpp"

using namespace metaopt;

namespace {

InnerModel tiny_model() {
  InnerModel::Config cfg;
  cfg.in_channels = 1;
  cfg.height = 6;
  cfg.width = 6;
  cfg.n_classes = 3;
  cfg.channels = {2, 2, 2, 2};
  return InnerModel(cfg);
}

}  // namespace

TEST_CASE("theta has 610 parameters at the default sizes") {
  LearnedOptimizer opt;
  CHECK(opt.theta_dim() == 610);  // 16*32 + 32 + 32*2 + 2
}

TEST_CASE("theta init zeroes biases and is reproducible") {
  LearnedOptimizer opt;
  Rng r1(9), r2(9), r3(10);
  const auto a = opt.init_theta(r1);
  REQUIRE(a.size() == 610);
  for (int i = 512; i < 544; ++i) CHECK(a[static_cast<std::size_t>(i)] == 0.0);  // b1
  CHECK(a[608] == 0.0);  // b2
  CHECK(a[609] == 0.0);
  int nonzero = 0;
  for (int i = 0; i < 512; ++i) nonzero += a[static_cast<std::size_t>(i)] != 0.0;
  CHECK(nonzero == 512);
  CHECK(opt.init_theta(r2) == a);
  CHECK(opt.init_theta(r3) != a);
}

TEST_CASE("momentum accumulators follow the EMA recurrence exactly") {
  InnerModel m = tiny_model();
  LearnedOptState state(m.layout());
  const std::size_t n = static_cast<std::size_t>(m.n_params());
  std::vector<double> ones(n, 1.0);

  state.advance_momenta(ones);
  CHECK(state.t() == 1);
  const double betas[5] = {0.5, 0.9, 0.99, 0.999, 0.9999};
  for (int d = 0; d < 5; ++d)
    for (double v : state.momentum(d)) CHECK(v == doctest::Approx(1.0 - betas[d]).epsilon(1e-15));

  state.advance_momenta(ones);
  CHECK(state.t() == 2);
  for (int d = 0; d < 5; ++d)
    for (double v : state.momentum(d))
      CHECK(v == doctest::Approx(1.0 - betas[d] * betas[d]).epsilon(1e-15));

  state.reset();
  CHECK(state.t() == 0);
  for (int d = 0; d < 5; ++d)
    for (double v : state.momentum(d)) CHECK(v == 0.0);
}

TEST_CASE("feature rows match an independently computed reference") {
  InnerModel model = tiny_model();
  const auto& layout = model.layout();
  const std::int64_t n = layout.n_params;
  LearnedOptConfig cfg;
  LearnedOptState state(layout, cfg);

  Rng rng(21);
  std::vector<double> w(static_cast<std::size_t>(n)), g(static_cast<std::size_t>(n));
  for (auto& v : w) v = rng.normal();
  for (auto& v : g) v = 0.5 * rng.normal();
  // run three momentum updates with distinct gradients so t=3
  std::vector<double> g1(g), g2(g), g3(g);
  for (auto& v : g2) v *= -0.7;
  for (auto& v : g3) v *= 0.3;
  state.advance_momenta(g1);
  state.advance_momenta(g2);
  state.advance_momenta(g3);

  std::vector<double> feats;
  state.compute_features(w, g3, feats);
  REQUIRE(feats.size() == static_cast<std::size_t>(n) * 16);

  // reference: recompute momenta from scratch, then normalize column by column
  const double betas[5] = {0.5, 0.9, 0.99, 0.999, 0.9999};
  for (const auto& e : layout.tensors) {
    std::vector<std::vector<double>> raw(8, std::vector<double>(static_cast<std::size_t>(e.size)));
    for (std::int64_t i = 0; i < e.size; ++i) {
      const std::size_t p = static_cast<std::size_t>(e.offset + i);
      raw[0][static_cast<std::size_t>(i)] = g3[p];
      for (int d = 0; d < 5; ++d) {
        double m = 0.0;
        for (const auto* gv : {&g1, &g2, &g3}) m = betas[d] * m + (1 - betas[d]) * (*gv)[p];
        raw[static_cast<std::size_t>(1 + d)][static_cast<std::size_t>(i)] = m;
      }
      raw[6][static_cast<std::size_t>(i)] = w[p];
      raw[7][static_cast<std::size_t>(i)] = std::log(std::abs(w[p]) + 1e-8);
    }
    double wnorm = 0.0;
    for (std::int64_t i = 0; i < e.size; ++i) wnorm += w[static_cast<std::size_t>(e.offset + i)] * w[static_cast<std::size_t>(e.offset + i)];
    wnorm = std::sqrt(wnorm);
    for (int c = 0; c < 8; ++c) {
      double rms = std::sqrt(std::inner_product(raw[static_cast<std::size_t>(c)].begin(), raw[static_cast<std::size_t>(c)].end(),
                                                raw[static_cast<std::size_t>(c)].begin(), 0.0) /
                             static_cast<double>(e.size));
      for (std::int64_t i = 0; i < e.size; ++i) {
        const double want = raw[static_cast<std::size_t>(c)][static_cast<std::size_t>(i)] / (rms + 1e-6);
        CHECK(feats[static_cast<std::size_t>((e.offset + i) * 16 + c)] == doctest::Approx(want).epsilon(1e-12));
      }
    }
    for (std::int64_t i = 0; i < e.size; ++i) {
      const double* row = feats.data() + (e.offset + i) * 16;
      for (int k = 0; k < 6; ++k) {
        const double s = LearnedOptConfig{}.time_scales[static_cast<std::size_t>(k)];
        CHECK(row[8 + k] == doctest::Approx(std::sin(s * 3.0 / std::numbers::pi)).epsilon(1e-15));
      }
      CHECK(row[14] == doctest::Approx(std::log(wnorm + 1e-8)).epsilon(1e-12));
      CHECK(row[15] == doctest::Approx(std::log(static_cast<double>(e.size))).epsilon(1e-15));
    }
  }
}

TEST_CASE("mlp forward matches a naive reimplementation") {
  LearnedOptimizer opt;
  Rng rng(33);
  auto theta = opt.init_theta(rng);
  // give the biases values too
  for (int i = 512; i < 544; ++i) theta[static_cast<std::size_t>(i)] = 0.05 * rng.normal();
  theta[608] = 0.3;
  theta[609] = -0.2;

  const std::int64_t n = 7;
  std::vector<double> feats(static_cast<std::size_t>(n) * 16);
  for (auto& v : feats) v = rng.normal();
  std::vector<double> out(static_cast<std::size_t>(n) * 2);
  opt.mlp_forward(theta, feats, n, out);

  for (std::int64_t r = 0; r < n; ++r) {
    double h[32];
    for (int j = 0; j < 32; ++j) {
      double acc = theta[static_cast<std::size_t>(512 + j)];
      for (int i = 0; i < 16; ++i) acc += theta[static_cast<std::size_t>(j * 16 + i)] * feats[static_cast<std::size_t>(r * 16 + i)];
      h[j] = std::max(0.0, acc);
    }
    for (int k = 0; k < 2; ++k) {
      double acc = theta[static_cast<std::size_t>(608 + k)];
      for (int j = 0; j < 32; ++j) acc += theta[static_cast<std::size_t>(544 + k * 32 + j)] * h[j];
      CHECK(out[static_cast<std::size_t>(r * 2 + k)] == doctest::Approx(acc).epsilon(1e-13));
    }
  }
}

TEST_CASE("zero theta performs no update") {
  InnerModel m = tiny_model();
  LearnedOptimizer opt;
  LearnedOptState state(m.layout());
  std::vector<double> theta(610, 0.0);
  Rng rng(4);
  auto w = m.init_params(rng);
  const auto w0 = w;
  std::vector<double> g(w.size(), 0.7);
  state.apply_step(opt, theta, w, g);
  CHECK(w == w0);
  CHECK(state.t() == 1);
}

TEST_CASE("output biases alone give the closed-form update magnitude") {
  InnerModel m = tiny_model();
  LearnedOptimizer opt;
  LearnedOptState state(m.layout());
  // W1 = 0 so hidden is zero; output is exactly b2 = (a, b) for every param
  std::vector<double> theta(610, 0.0);
  const double a = 2.0, b = 1000.0;
  theta[608] = a;
  theta[609] = b;
  std::vector<double> w(static_cast<std::size_t>(m.n_params()), 0.25);
  std::vector<double> g(w.size(), -1.3);
  state.apply_step(opt, theta, w, g);
  const double delta = 0.001 * a * std::exp(0.001 * b);  // = 0.002 e ~ 0.0054366
  CHECK(delta == doctest::Approx(0.0054365636569180902).epsilon(1e-12));
  for (double v : w) CHECK(v == doctest::Approx(0.25 - delta).epsilon(1e-15));
}

TEST_CASE("a hand-wired theta that mimics normalized gradient descent learns") {
  auto toy = make_toy_dataset(60, 5);
  InnerModel::Config cfg;
  cfg.in_channels = 3;
  cfg.height = 8;
  cfg.width = 8;
  cfg.n_classes = 4;
  cfg.channels = {4, 4, 8, 8};
  InnerModel model(cfg);

  // h0 = relu(g_norm), h1 = relu(-g_norm); a = h0 - h1 = g_norm, b = 0
  // so the step is 0.001 * g / (rms_g + eps): steepest descent, per tensor.
  std::vector<double> theta(610, 0.0);
  theta[0 * 16 + 0] = 1.0;   // W1 row 0 reads feature 0 (the gradient)
  theta[1 * 16 + 0] = -1.0;  // W1 row 1 reads its negation
  theta[544 + 0] = 10.0;     // W2 row for output a
  theta[544 + 1] = -10.0;

  LearnedOptimizer opt;
  LearnedOptState state(model.layout());
  Rng rng(77);
  auto w = model.init_params(rng);
  std::vector<double> grad(w.size());
  InnerWorkspace ws;
  ImageBatch batch;
  Rng data_rng(88);

  sample_minibatch(toy.train, 32, data_rng, batch);
  const double first = model.loss(w, batch, ws);
  double last = 0.0;
  for (int s = 0; s < 150; ++s) {
    sample_minibatch(toy.train, 32, data_rng, batch);
    last = learned_inner_step(model, batch, opt, theta, state, w, grad, ws);
  }
  CHECK(state.t() == 150);
  CHECK(last < first - 0.2);
}

TEST_CASE("checkpoints round-trip exactly and reject tampering") {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "metaopt_ckpt_test";
  fs::create_directories(dir);
  const std::string path = (dir / "theta.ckpt").string();

  LearnedOptimizer opt;
  Rng rng(2718);
  const auto theta = opt.init_theta(rng);
  save_theta_checkpoint(path, theta, opt.config());

  CHECK(fs::exists(path));
  CHECK(fs::exists(path + ".txt"));
  const auto loaded = load_theta_checkpoint(path, opt.config());
  CHECK(loaded == theta);

  // sidecar records the payload hash
  std::ifstream side(path + ".txt");
  std::string key, value, hash;
  while (side >> key >> value)
    if (key == "fnv1a64") hash = value;
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx",
                static_cast<unsigned long long>(fnv1a64(
                    {reinterpret_cast<const unsigned char*>(theta.data()), theta.size() * 8})));
  CHECK(hash == hex);

  // flip one payload byte: hash check trips
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8 + 16 + 8 + 100);
    char c;
    f.seekg(8 + 16 + 8 + 100);
    f.read(&c, 1);
    ++c;
    f.seekp(8 + 16 + 8 + 100);
    f.write(&c, 1);
  }
  CHECK_THROWS_AS(load_theta_checkpoint(path, opt.config()), std::runtime_error);

  // bad magic
  save_theta_checkpoint(path, theta, opt.config());
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("NOPE", 4);
  }
  CHECK_THROWS_AS(load_theta_checkpoint(path, opt.config()), std::runtime_error);

  // truncated payload
  save_theta_checkpoint(path, theta, opt.config());
  fs::resize_file(path, fs::file_size(path) - 16);
  CHECK_THROWS_AS(load_theta_checkpoint(path, opt.config()), std::runtime_error);

  CHECK_THROWS_AS(load_theta_checkpoint((dir / "missing.ckpt").string(), opt.config()),
                  std::runtime_error);
}

TEST_CASE("fnv1a64 matches published test vectors") {
  CHECK(fnv1a64({}) == 14695981039346656037ULL);
  const unsigned char a[] = {'a'};
  CHECK(fnv1a64({a, 1}) == 0xaf63dc4c8601ec8cULL);
  const unsigned char foobar[] = {'f', 'o', 'o', 'b', 'a', 'r'};
  CHECK(fnv1a64({foobar, 6}) == 0x85944171f73967e8ULL);
}

TEST_CASE("apply_step validates lengths") {
  InnerModel m = tiny_model();
  LearnedOptimizer opt;
  LearnedOptState state(m.layout());
  std::vector<double> theta(610, 0.0);
  std::vector<double> w(3, 0.0), g(3, 0.0);
  CHECK_THROWS_AS(state.apply_step(opt, theta, w, g), std::invalid_argument);
}
