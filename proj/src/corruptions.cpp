#include "metaopt/corruptions.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace metaopt {

extern const char* kSeverityTableText;  // generated from data/severity_table_v1.txt

namespace {

std::atomic<std::uint64_t> g_apply_count{0};

struct KindInfo {
  Corruption kind;
  const char* name;
  int n_params;  // -1 for kinds without table rows
};

constexpr KindInfo kKinds[] = {
    {Corruption::kIdentity, "identity", -1},
    {Corruption::kGaussianNoise, "gaussian_noise", 1},
    {Corruption::kShotNoise, "shot_noise", 1},
    {Corruption::kImpulseNoise, "impulse_noise", 1},
    {Corruption::kDefocusBlur, "defocus_blur", 1},
    {Corruption::kGlassBlur, "glass_blur", 2},
    {Corruption::kZoomBlur, "zoom_blur", 1},
    {Corruption::kFog, "fog", 2},
    {Corruption::kBrightness, "brightness", 1},
    {Corruption::kContrast, "contrast", 1},
    {Corruption::kGaussianSigma, "gaussian_sigma", -1},
};

const KindInfo& info_for(Corruption k) {
  for (const auto& ki : kKinds)
    if (ki.kind == k) return ki;
  throw std::logic_error("unknown corruption enum value");
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

const char* corruption_name(Corruption k) { return info_for(k).name; }

Corruption corruption_from_name(const std::string& name) {
  for (const auto& ki : kKinds)
    if (name == ki.name) return ki.kind;
  throw std::invalid_argument("unknown corruption kind '" + name + "'");
}

const std::vector<Corruption>& train_corruptions() {
  static const std::vector<Corruption> v{
      Corruption::kGaussianNoise, Corruption::kShotNoise,  Corruption::kImpulseNoise,
      Corruption::kDefocusBlur,   Corruption::kZoomBlur,   Corruption::kBrightness,
      Corruption::kContrast,
  };
  return v;
}

const std::vector<Corruption>& heldout_corruptions() {
  static const std::vector<Corruption> v{Corruption::kGlassBlur, Corruption::kFog};
  return v;
}

namespace {

// Direction the leading parameter moves as severity grows; shot noise and
// contrast get *milder* as their parameter grows, so they must decrease.
bool param_grows(Corruption k) {
  return !(k == Corruption::kShotNoise || k == Corruption::kContrast);
}

}  // namespace

SeverityTable SeverityTable::parse(const std::string& text) {
  SeverityTable t;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  bool saw_version = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (!saw_version) {
      int v;
      if (first != "version" || !(ls >> v) || v <= 0)
        throw std::runtime_error("severity table line " + std::to_string(lineno) +
                                 ": expected 'version <n>' before any rows");
      t.version_ = v;
      saw_version = true;
      continue;
    }
    Corruption kind = corruption_from_name(first);
    const int n_params = info_for(kind).n_params;
    if (n_params < 0)
      throw std::runtime_error("severity table line " + std::to_string(lineno) + ": kind '" +
                               first + "' takes no table row");
    int sev;
    if (!(ls >> sev) || sev < 1 || sev > 5)
      throw std::runtime_error("severity table line " + std::to_string(lineno) +
                               ": severity must be 1..5");
    std::vector<double> params;
    double p;
    while (ls >> p) params.push_back(p);
    if (static_cast<int>(params.size()) != n_params)
      throw std::runtime_error("severity table line " + std::to_string(lineno) + ": '" + first +
                               "' needs " + std::to_string(n_params) + " parameter(s), got " +
                               std::to_string(params.size()));
    for (double v : params)
      if (!(v > 0.0))
        throw std::runtime_error("severity table line " + std::to_string(lineno) +
                                 ": parameters must be positive");
    if (!t.rows_.emplace(std::make_pair(kind, sev), std::move(params)).second)
      throw std::runtime_error("severity table line " + std::to_string(lineno) +
                               ": duplicate row for '" + first + "' severity " +
                               std::to_string(sev));
  }
  if (!saw_version) throw std::runtime_error("severity table: missing version line");

  for (const auto& ki : kKinds) {
    if (ki.n_params < 0) continue;
    for (int sev = 1; sev <= 5; ++sev)
      if (!t.rows_.count({ki.kind, sev}))
        throw std::runtime_error(std::string("severity table: missing row for '") + ki.name +
                                 "' severity " + std::to_string(sev));
    const bool grows = param_grows(ki.kind);
    for (int sev = 2; sev <= 5; ++sev) {
      const auto& lo = t.rows_.at({ki.kind, sev - 1});
      const auto& hi = t.rows_.at({ki.kind, sev});
      bool strict = false, ok = true;
      for (std::size_t i = 0; i < lo.size(); ++i) {
        const double a = grows ? lo[i] : hi[i];
        const double b = grows ? hi[i] : lo[i];
        if (b < a) ok = false;
        if (b > a) strict = true;
      }
      if (!ok || !strict)
        throw std::runtime_error(std::string("severity table: '") + ki.name +
                                 "' is not monotone between severities " + std::to_string(sev - 1) +
                                 " and " + std::to_string(sev));
    }
  }
  return t;
}

SeverityTable SeverityTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open severity table " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

const SeverityTable& SeverityTable::builtin() {
  static const SeverityTable t = parse(kSeverityTableText);
  return t;
}

const std::vector<double>& SeverityTable::params(Corruption kind, int severity) const {
  const auto it = rows_.find({kind, severity});
  if (it == rows_.end())
    throw std::out_of_range(std::string("severity table has no row for '") +
                            corruption_name(kind) + "' severity " + std::to_string(severity));
  return it->second;
}

std::vector<double> plasma_fractal(int n, double decay, Rng& rng) {
  if (n <= 0) throw std::invalid_argument("plasma_fractal: size must be positive");
  if (!(decay > 0.0)) throw std::invalid_argument("plasma_fractal: decay must be positive");
  int s = 2;
  while (s + 1 < n) s *= 2;
  ++s;  // (2^k + 1) grid, s >= n

  std::vector<double> g(static_cast<std::size_t>(s) * s, 0.0);
  auto at = [&](int i, int j) -> double& { return g[static_cast<std::size_t>(i) * s + j]; };
  at(0, 0) = rng.uniform();
  at(0, s - 1) = rng.uniform();
  at(s - 1, 0) = rng.uniform();
  at(s - 1, s - 1) = rng.uniform();

  double amp = 1.0;
  for (int step = s - 1; step > 1; step /= 2) {
    const int half = step / 2;
    // diamond: centers from the four surrounding corners
    for (int i = half; i < s; i += step)
      for (int j = half; j < s; j += step) {
        const double avg = (at(i - half, j - half) + at(i - half, j + half) +
                            at(i + half, j - half) + at(i + half, j + half)) /
                           4.0;
        at(i, j) = avg + amp * (rng.uniform() - 0.5);
      }
    // square: edge midpoints from whichever of the four neighbours exist
    for (int i = 0; i < s; i += half)
      for (int j = ((i / half) % 2 == 0) ? half : 0; j < s; j += step) {
        double sum = 0.0;
        int cnt = 0;
        if (i - half >= 0) sum += at(i - half, j), ++cnt;
        if (i + half < s) sum += at(i + half, j), ++cnt;
        if (j - half >= 0) sum += at(i, j - half), ++cnt;
        if (j + half < s) sum += at(i, j + half), ++cnt;
        at(i, j) = sum / cnt + amp * (rng.uniform() - 0.5);
      }
    amp *= decay;
  }

  double lo = g[0], hi = g[0];
  for (double v : g) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> out(static_cast<std::size_t>(n) * n, 0.5);
  if (hi - lo > 1e-12) {
    const double inv = 1.0 / (hi - lo);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out[static_cast<std::size_t>(i) * n + j] = (at(i, j) - lo) * inv;
  }
  return out;
}

void gaussian_blur_plane(std::span<const double> in, std::span<double> out, int h, int w,
                         double sigma) {
  if (in.size() != static_cast<std::size_t>(h) * w || out.size() != in.size())
    throw std::invalid_argument("gaussian_blur_plane: bad buffer size");
  if (sigma < 0.05) {
    std::copy(in.begin(), in.end(), out.begin());
    return;
  }
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : k) v /= sum;

  std::vector<double> tmp(in.size());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d)
        acc += k[static_cast<std::size_t>(d + r)] * in[static_cast<std::size_t>(i) * w + std::clamp(j + d, 0, w - 1)];
      tmp[static_cast<std::size_t>(i) * w + j] = acc;
    }
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      double acc = 0.0;
      for (int d = -r; d <= r; ++d)
        acc += k[static_cast<std::size_t>(d + r)] * tmp[static_cast<std::size_t>(std::clamp(i + d, 0, h - 1)) * w + j];
      out[static_cast<std::size_t>(i) * w + j] = acc;
    }
}

namespace {

// out(i,j) = bilinear sample of in at the source point that maps to (i,j)
// under a zoom of factor z about the image center.
void center_zoom_plane(const double* in, double* out, int h, int w, double z) {
  const double ci = (h - 1) / 2.0, cj = (w - 1) / 2.0;
  for (int i = 0; i < h; ++i) {
    const double si = ci + (i - ci) / z;
    const int i0 = std::clamp(static_cast<int>(std::floor(si)), 0, h - 1);
    const int i1 = std::min(i0 + 1, h - 1);
    const double fi = si - std::floor(si);
    for (int j = 0; j < w; ++j) {
      const double sj = cj + (j - cj) / z;
      const int j0 = std::clamp(static_cast<int>(std::floor(sj)), 0, w - 1);
      const int j1 = std::min(j0 + 1, w - 1);
      const double fj = sj - std::floor(sj);
      const double top = in[i0 * w + j0] * (1 - fj) + in[i0 * w + j1] * fj;
      const double bot = in[i1 * w + j0] * (1 - fj) + in[i1 * w + j1] * fj;
      out[i * w + j] = top * (1 - fi) + bot * fi;
    }
  }
}

void defocus(double* img, int c, int h, int w, double radius) {
  const double r = radius * h / 32.0;
  const int R = static_cast<int>(std::ceil(r + 0.5));
  const int side = 2 * R + 1;
  std::vector<double> k(static_cast<std::size_t>(side) * side);
  double sum = 0.0;
  for (int di = -R; di <= R; ++di)
    for (int dj = -R; dj <= R; ++dj) {
      const double d = std::sqrt(double(di * di + dj * dj));
      const double wgt = std::clamp(r + 0.5 - d, 0.0, 1.0);
      k[static_cast<std::size_t>(di + R) * side + (dj + R)] = wgt;
      sum += wgt;
    }
  for (auto& v : k) v /= sum;

  std::vector<double> src(static_cast<std::size_t>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    double* plane = img + static_cast<std::size_t>(ch) * h * w;
    std::copy(plane, plane + h * w, src.begin());
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double acc = 0.0;
        for (int di = -R; di <= R; ++di) {
          const int ii = std::clamp(i + di, 0, h - 1);
          for (int dj = -R; dj <= R; ++dj)
            acc += k[static_cast<std::size_t>(di + R) * side + (dj + R)] *
                   src[static_cast<std::size_t>(ii) * w + std::clamp(j + dj, 0, w - 1)];
        }
        plane[static_cast<std::size_t>(i) * w + j] = acc;
      }
  }
}

void glass(double* img, int c, int h, int w, double sigma, int rounds, Rng& rng) {
  const double s = sigma * h / 32.0;
  std::vector<double> tmp(static_cast<std::size_t>(h) * w);
  for (int ch = 0; ch < c; ++ch) {
    double* plane = img + static_cast<std::size_t>(ch) * h * w;
    gaussian_blur_plane(std::span<const double>(plane, tmp.size()), tmp, h, w, s);
    std::copy(tmp.begin(), tmp.end(), plane);
  }
  for (int round = 0; round < rounds; ++round)
    for (int i = h - 1; i >= 0; --i)
      for (int j = w - 1; j >= 0; --j) {
        const int di = rng.uniform_int(-1, 1);
        const int dj = rng.uniform_int(-1, 1);
        const int ii = std::clamp(i + di, 0, h - 1);
        const int jj = std::clamp(j + dj, 0, w - 1);
        for (int ch = 0; ch < c; ++ch) {
          double* plane = img + static_cast<std::size_t>(ch) * h * w;
          std::swap(plane[static_cast<std::size_t>(i) * w + j], plane[static_cast<std::size_t>(ii) * w + jj]);
        }
      }
  for (int ch = 0; ch < c; ++ch) {
    double* plane = img + static_cast<std::size_t>(ch) * h * w;
    gaussian_blur_plane(std::span<const double>(plane, tmp.size()), tmp, h, w, s);
    std::copy(tmp.begin(), tmp.end(), plane);
  }
}

void zoom_blur(double* img, int c, int h, int w, double zmax) {
  std::vector<double> acc(static_cast<std::size_t>(h) * w);
  std::vector<double> src(acc.size()), zoomed(acc.size());
  for (int ch = 0; ch < c; ++ch) {
    double* plane = img + static_cast<std::size_t>(ch) * h * w;
    std::copy(plane, plane + h * w, src.begin());
    std::fill(acc.begin(), acc.end(), 0.0);
    int count = 0;
    for (double z = 1.0; z <= zmax + 1e-9; z += 0.01) {
      center_zoom_plane(src.data(), zoomed.data(), h, w, z);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += zoomed[i];
      ++count;
    }
    for (std::size_t i = 0; i < acc.size(); ++i) plane[i] = acc[i] / count;
  }
}

void fog(double* img, int c, int h, int w, double phi, double decay, Rng& rng) {
  const auto plasma = plasma_fractal(std::max(h, w), decay, rng);
  double maxval = 0.0;
  const std::size_t n = static_cast<std::size_t>(c) * h * w;
  for (std::size_t i = 0; i < n; ++i) maxval = std::max(maxval, img[i]);
  const double scale = maxval / (maxval + phi);
  for (int ch = 0; ch < c; ++ch)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        double& v = img[(static_cast<std::size_t>(ch) * h + i) * w + j];
        v = (v + phi * plasma[static_cast<std::size_t>(i) * std::max(h, w) + j]) * scale;
      }
}

}  // namespace

void apply_corruption(const CorruptionSpec& spec, const SeverityTable& table, int c, int h, int w,
                      std::span<const double> in, std::span<double> out, Rng& rng) {
  const std::size_t n = static_cast<std::size_t>(c) * h * w;
  if (in.size() != n || out.size() != n)
    throw std::invalid_argument("apply_corruption: buffer size does not match [C,H,W]");
  g_apply_count.fetch_add(1, std::memory_order_relaxed);

  if (out.data() != in.data()) std::copy(in.begin(), in.end(), out.begin());
  double* img = out.data();

  const KindInfo& ki = info_for(spec.kind);
  const std::vector<double>* p = nullptr;
  if (ki.n_params > 0) p = &table.params(spec.kind, spec.severity);

  switch (spec.kind) {
    case Corruption::kIdentity:
      return;
    case Corruption::kGaussianNoise:
    case Corruption::kGaussianSigma: {
      const double sigma = spec.kind == Corruption::kGaussianSigma ? spec.sigma : (*p)[0];
      if (sigma < 0.0) throw std::invalid_argument("gaussian noise: sigma must be >= 0");
      if (sigma == 0.0) return;
      for (std::size_t i = 0; i < n; ++i) img[i] += sigma * rng.normal();
      break;
    }
    case Corruption::kShotNoise: {
      const double lambda = (*p)[0];
      std::poisson_distribution<long> pois;
      for (std::size_t i = 0; i < n; ++i) {
        const double mean = img[i] * lambda;
        if (mean <= 0.0) {
          img[i] = 0.0;
          continue;
        }
        pois.param(std::poisson_distribution<long>::param_type(mean));
        img[i] = static_cast<double>(pois(rng.engine())) / lambda;
      }
      break;
    }
    case Corruption::kImpulseNoise: {
      const double prob = (*p)[0];
      for (std::size_t i = 0; i < n; ++i)
        if (rng.uniform() < prob) img[i] = rng.uniform() < 0.5 ? 0.0 : 1.0;
      break;
    }
    case Corruption::kDefocusBlur:
      defocus(img, c, h, w, (*p)[0]);
      break;
    case Corruption::kGlassBlur:
      glass(img, c, h, w, (*p)[0], static_cast<int>((*p)[1]), rng);
      break;
    case Corruption::kZoomBlur:
      zoom_blur(img, c, h, w, (*p)[0]);
      break;
    case Corruption::kFog:
      fog(img, c, h, w, (*p)[0], (*p)[1], rng);
      break;
    case Corruption::kBrightness:
      for (std::size_t i = 0; i < n; ++i) img[i] += (*p)[0];
      break;
    case Corruption::kContrast: {
      const double f = (*p)[0];
      const std::size_t hw = static_cast<std::size_t>(h) * w;
      for (int ch = 0; ch < c; ++ch) {
        double* plane = img + ch * hw;
        double mean = 0.0;
        for (std::size_t i = 0; i < hw; ++i) mean += plane[i];
        mean /= static_cast<double>(hw);
        for (std::size_t i = 0; i < hw; ++i) plane[i] = (plane[i] - mean) * f + mean;
      }
      break;
    }
  }
  for (std::size_t i = 0; i < n; ++i) img[i] = clamp01(img[i]);
}

void corrupt_batch(const CorruptionSpec& spec, const SeverityTable& table, ImageBatch& batch,
                   Rng& rng) {
  if (batch.x.rank() != 4) throw std::invalid_argument("corrupt_batch: batch must be [B,C,H,W]");
  const std::int64_t B = batch.x.dim(0);
  const int c = static_cast<int>(batch.x.dim(1));
  const int h = static_cast<int>(batch.x.dim(2));
  const int w = static_cast<int>(batch.x.dim(3));
  const std::int64_t elems = batch.x.numel() / B;
  for (std::int64_t b = 0; b < B; ++b) {
    double* img = batch.x.data.data() + b * elems;
    apply_corruption(spec, table, c, h, w, std::span<const double>(img, static_cast<std::size_t>(elems)),
                     std::span<double>(img, static_cast<std::size_t>(elems)), rng);
  }
}

std::uint64_t corruption_apply_count() { return g_apply_count.load(std::memory_order_relaxed); }
void reset_corruption_apply_count() { g_apply_count.store(0, std::memory_order_relaxed); }

CorruptionSpec sample_train_corruption(Rng& rng, int max_severity) {
  if (max_severity < 1 || max_severity > 5)
    throw std::invalid_argument("sample_train_corruption: max_severity must be 1..5");
  const auto& kinds = train_corruptions();
  CorruptionSpec s;
  s.kind = kinds[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(kinds.size())))];
  s.severity = rng.uniform_int(1, max_severity);
  return s;
}

}  // namespace metaopt
