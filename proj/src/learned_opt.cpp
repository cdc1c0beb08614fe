#include "metaopt/learned_opt.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace metaopt {

LearnedOptimizer::LearnedOptimizer(LearnedOptConfig cfg) : cfg_(cfg) {
  if (cfg_.n_inputs != 8 + static_cast<int>(cfg_.time_scales.size()) + 2)
    throw std::invalid_argument("LearnedOptimizer: n_inputs does not match the feature set");
  if (cfg_.hidden <= 0 || cfg_.n_outputs != 2)
    throw std::invalid_argument("LearnedOptimizer: bad layer sizes");
}

std::int64_t LearnedOptimizer::theta_dim() const {
  return static_cast<std::int64_t>(cfg_.n_inputs) * cfg_.hidden + cfg_.hidden +
         static_cast<std::int64_t>(cfg_.hidden) * cfg_.n_outputs + cfg_.n_outputs;
}

std::vector<double> LearnedOptimizer::init_theta(Rng& rng) const {
  std::vector<double> theta(static_cast<std::size_t>(theta_dim()), 0.0);
  const std::int64_t w1 = static_cast<std::int64_t>(cfg_.n_inputs) * cfg_.hidden;
  const std::int64_t b1 = cfg_.hidden;
  const std::int64_t w2 = static_cast<std::int64_t>(cfg_.hidden) * cfg_.n_outputs;
  for (std::int64_t i = 0; i < w1; ++i) theta[static_cast<std::size_t>(i)] = 0.1 * rng.normal();
  for (std::int64_t i = 0; i < w2; ++i)
    theta[static_cast<std::size_t>(w1 + b1 + i)] = 0.1 * rng.normal();
  return theta;
}

void LearnedOptimizer::mlp_forward(std::span<const double> theta, std::span<const double> features,
                                   std::int64_t n, std::span<double> out) const {
  const int in = cfg_.n_inputs, hid = cfg_.hidden, no = cfg_.n_outputs;
  if (static_cast<std::int64_t>(theta.size()) != theta_dim())
    throw std::invalid_argument("mlp_forward: theta has wrong length");
  if (static_cast<std::int64_t>(features.size()) != n * in ||
      static_cast<std::int64_t>(out.size()) != n * no)
    throw std::invalid_argument("mlp_forward: buffer sizes do not match n");

  const double* W1 = theta.data();
  const double* B1 = W1 + static_cast<std::size_t>(in) * hid;
  const double* W2 = B1 + hid;
  const double* B2 = W2 + static_cast<std::size_t>(hid) * no;

  std::vector<double> h(static_cast<std::size_t>(hid));
  for (std::int64_t r = 0; r < n; ++r) {
    const double* x = features.data() + r * in;
    for (int j = 0; j < hid; ++j) {
      const double* wrow = W1 + static_cast<std::size_t>(j) * in;
      double acc = B1[j];
      for (int i = 0; i < in; ++i) acc += wrow[i] * x[i];
      h[static_cast<std::size_t>(j)] = acc > 0.0 ? acc : 0.0;
    }
    double* o = out.data() + r * no;
    for (int k = 0; k < no; ++k) {
      const double* wrow = W2 + static_cast<std::size_t>(k) * hid;
      double acc = B2[k];
      for (int j = 0; j < hid; ++j) acc += wrow[j] * h[static_cast<std::size_t>(j)];
      o[k] = acc;
    }
  }
}

LearnedOptState::LearnedOptState(const ParamLayout& layout, LearnedOptConfig cfg)
    : layout_(&layout), cfg_(cfg) {
  for (auto& m : m_) m.assign(static_cast<std::size_t>(layout.n_params), 0.0);
  feat_buf_.assign(static_cast<std::size_t>(layout.n_params) * cfg_.n_inputs, 0.0);
  out_buf_.assign(static_cast<std::size_t>(layout.n_params) * cfg_.n_outputs, 0.0);
}

void LearnedOptState::reset() {
  t_ = 0;
  for (auto& m : m_) std::fill(m.begin(), m.end(), 0.0);
}

void LearnedOptState::advance_momenta(std::span<const double> g) {
  if (static_cast<std::int64_t>(g.size()) != layout_->n_params)
    throw std::invalid_argument("advance_momenta: gradient has wrong length");
  ++t_;
  for (std::size_t d = 0; d < m_.size(); ++d) {
    const double beta = cfg_.momentum_decays[d];
    auto& m = m_[d];
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = beta * m[i] + (1.0 - beta) * g[i];
  }
}

void LearnedOptState::compute_features(std::span<const double> w, std::span<const double> g,
                                       std::vector<double>& features) const {
  const std::int64_t n = layout_->n_params;
  const int F = cfg_.n_inputs;
  if (static_cast<std::int64_t>(w.size()) != n || static_cast<std::int64_t>(g.size()) != n)
    throw std::invalid_argument("compute_features: bad vector length");
  features.assign(static_cast<std::size_t>(n) * F, 0.0);

  double time_feat[6];
  for (int k = 0; k < 6; ++k)
    time_feat[k] = std::sin(cfg_.time_scales[static_cast<std::size_t>(k)] * static_cast<double>(t_) /
                            std::numbers::pi);

  for (const auto& e : layout_->tensors) {
    // raw per-parameter columns first, then per-tensor rms normalization
    double sq[8] = {0, 0, 0, 0, 0, 0, 0, 0};
    double norm2 = 0.0;
    for (std::int64_t i = 0; i < e.size; ++i) {
      const std::int64_t p = e.offset + i;
      double* row = features.data() + p * F;
      row[0] = g[static_cast<std::size_t>(p)];
      for (int d = 0; d < 5; ++d) row[1 + d] = m_[static_cast<std::size_t>(d)][static_cast<std::size_t>(p)];
      row[6] = w[static_cast<std::size_t>(p)];
      row[7] = std::log(std::abs(w[static_cast<std::size_t>(p)]) + cfg_.feature_eps);
      for (int c = 0; c < 8; ++c) sq[c] += row[c] * row[c];
      norm2 += w[static_cast<std::size_t>(p)] * w[static_cast<std::size_t>(p)];
    }
    double inv[8];
    for (int c = 0; c < 8; ++c)
      inv[c] = 1.0 / (std::sqrt(sq[c] / static_cast<double>(e.size)) + cfg_.norm_eps);
    const double log_norm = std::log(std::sqrt(norm2) + cfg_.feature_eps);
    const double log_count = std::log(static_cast<double>(e.size));
    for (std::int64_t i = 0; i < e.size; ++i) {
      double* row = features.data() + (e.offset + i) * F;
      for (int c = 0; c < 8; ++c) row[c] *= inv[c];
      for (int k = 0; k < 6; ++k) row[8 + k] = time_feat[k];
      row[14] = log_norm;
      row[15] = log_count;
    }
  }
}

void LearnedOptState::apply_step(const LearnedOptimizer& opt, std::span<const double> theta,
                                 std::span<double> w, std::span<const double> g) {
  const std::int64_t n = layout_->n_params;
  if (static_cast<std::int64_t>(w.size()) != n)
    throw std::invalid_argument("apply_step: parameter vector has wrong length");
  advance_momenta(g);
  compute_features(w, g, feat_buf_);
  opt.mlp_forward(theta, feat_buf_, n, out_buf_);
  const double ss = cfg_.step_scale, es = cfg_.exp_scale;
  for (std::int64_t i = 0; i < n; ++i) {
    const double a = out_buf_[static_cast<std::size_t>(2 * i)];
    const double b = out_buf_[static_cast<std::size_t>(2 * i + 1)];
    w[static_cast<std::size_t>(i)] -= ss * a * std::exp(es * b);
  }
}

double learned_inner_step(const InnerModel& model, const ImageBatch& batch,
                          const LearnedOptimizer& opt, std::span<const double> theta,
                          LearnedOptState& state, std::span<double> w, std::span<double> grad_buf,
                          InnerWorkspace& ws) {
  const double loss = model.loss_and_grad(w, batch, grad_buf, ws);
  state.apply_step(opt, theta, w, grad_buf);
  return loss;
}

std::uint64_t fnv1a64(std::span<const unsigned char> bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

namespace {

constexpr char kMagic[8] = {'M', 'O', 'P', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void save_theta_checkpoint(const std::string& path, std::span<const double> theta,
                           const LearnedOptConfig& cfg) {
  LearnedOptimizer opt(cfg);
  if (static_cast<std::int64_t>(theta.size()) != opt.theta_dim())
    throw std::invalid_argument("save_theta_checkpoint: theta has wrong length");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, 8);
  const std::uint32_t dims[4] = {kVersion, static_cast<std::uint32_t>(cfg.n_inputs),
                                 static_cast<std::uint32_t>(cfg.hidden),
                                 static_cast<std::uint32_t>(cfg.n_outputs)};
  out.write(reinterpret_cast<const char*>(dims), sizeof dims);
  const std::uint64_t n = theta.size();
  out.write(reinterpret_cast<const char*>(&n), sizeof n);
  out.write(reinterpret_cast<const char*>(theta.data()),
            static_cast<std::streamsize>(theta.size() * sizeof(double)));
  if (!out) throw std::runtime_error("short write on checkpoint " + path);
  out.close();

  const std::uint64_t hash =
      fnv1a64({reinterpret_cast<const unsigned char*>(theta.data()), theta.size() * sizeof(double)});
  std::ofstream side(path + ".txt");
  if (!side) throw std::runtime_error("cannot write checkpoint sidecar " + path + ".txt");
  char hex[32];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
  side << "format moptckpt\n"
       << "version " << kVersion << "\n"
       << "n_inputs " << cfg.n_inputs << "\n"
       << "hidden " << cfg.hidden << "\n"
       << "n_outputs " << cfg.n_outputs << "\n"
       << "theta_dim " << n << "\n"
       << "fnv1a64 " << hex << "\n";
}

std::vector<double> load_theta_checkpoint(const std::string& path, const LearnedOptConfig& cfg) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  std::uint32_t dims[4];
  std::uint64_t n;
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error(path + ": not a theta checkpoint (bad magic)");
  if (!in.read(reinterpret_cast<char*>(dims), sizeof dims))
    throw std::runtime_error(path + ": truncated header");
  if (dims[0] != kVersion)
    throw std::runtime_error(path + ": unsupported checkpoint version " + std::to_string(dims[0]));
  if (dims[1] != static_cast<std::uint32_t>(cfg.n_inputs) ||
      dims[2] != static_cast<std::uint32_t>(cfg.hidden) ||
      dims[3] != static_cast<std::uint32_t>(cfg.n_outputs))
    throw std::runtime_error(path + ": layer sizes do not match the expected optimizer shape");
  if (!in.read(reinterpret_cast<char*>(&n), sizeof n))
    throw std::runtime_error(path + ": truncated header");
  LearnedOptimizer opt(cfg);
  if (n != static_cast<std::uint64_t>(opt.theta_dim()))
    throw std::runtime_error(path + ": theta_dim " + std::to_string(n) + " does not match");
  std::vector<double> theta(n);
  if (!in.read(reinterpret_cast<char*>(theta.data()), static_cast<std::streamsize>(n * sizeof(double))))
    throw std::runtime_error(path + ": truncated payload");
  char extra;
  if (in.read(&extra, 1)) throw std::runtime_error(path + ": trailing bytes after payload");

  std::ifstream side(path + ".txt");
  if (side) {
    std::string key, value;
    std::string want_hash;
    while (side >> key >> value)
      if (key == "fnv1a64") want_hash = value;
    if (!want_hash.empty()) {
      const std::uint64_t hash = fnv1a64(
          {reinterpret_cast<const unsigned char*>(theta.data()), theta.size() * sizeof(double)});
      char hex[32];
      std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(hash));
      if (want_hash != hex)
        throw std::runtime_error(path + ": payload hash mismatch against sidecar");
    }
  }
  return theta;
}

}  // namespace metaopt
