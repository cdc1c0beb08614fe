#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "metaopt/dataset.hpp"
#include "metaopt/rng.hpp"

namespace metaopt {

enum class Corruption {
  kIdentity,
  kGaussianNoise,
  kShotNoise,
  kImpulseNoise,
  kDefocusBlur,
  kGlassBlur,
  kZoomBlur,
  kFog,
  kBrightness,
  kContrast,
  kGaussianSigma,  // gaussian noise parameterized directly by sigma, no table lookup
};

const char* corruption_name(Corruption k);
Corruption corruption_from_name(const std::string& name);

// The 7 kinds meta-training samples from; glass_blur and fog are held out to
// measure transfer to unseen corruption types.
const std::vector<Corruption>& train_corruptions();
const std::vector<Corruption>& heldout_corruptions();

// Parsed severity table: per (kind, severity 1..5) parameter vectors. The
// table must cover all 9 table-driven kinds at all 5 severities, and each
// kind's parameters must grow monotonically in degradation strength.
class SeverityTable {
 public:
  static const SeverityTable& builtin();  // compiled-in copy of the shipped table
  static SeverityTable parse(const std::string& text);
  static SeverityTable load(const std::string& path);

  const std::vector<double>& params(Corruption kind, int severity) const;
  int version() const { return version_; }

 private:
  int version_ = 0;
  std::map<std::pair<Corruption, int>, std::vector<double>> rows_;
};

struct CorruptionSpec {
  Corruption kind = Corruption::kIdentity;
  int severity = 0;    // 1..5 for table-driven kinds, ignored otherwise
  double sigma = 0.0;  // kGaussianSigma only
};

// Applies one corruption to a [C,H,W] image with values in [0,1]; the result
// is clamped back to [0,1]. in and out may alias. Every call bumps a
// process-wide counter so tests can prove a code path never corrupts.
void apply_corruption(const CorruptionSpec& spec, const SeverityTable& table, int c, int h, int w,
                      std::span<const double> in, std::span<double> out, Rng& rng);

// Same spec applied to every image of the batch, in place.
void corrupt_batch(const CorruptionSpec& spec, const SeverityTable& table, ImageBatch& batch,
                   Rng& rng);

std::uint64_t corruption_apply_count();
void reset_corruption_apply_count();  // instrumentation hook for tests

// Uniform kind from the 7 training corruptions, severity uniform in
// [1, max_severity].
CorruptionSpec sample_train_corruption(Rng& rng, int max_severity = 3);

// Exposed for direct testing.
// n x n plasma via diamond-square on a (2^k+1) grid, min-max normalized to [0,1].
std::vector<double> plasma_fractal(int n, double decay, Rng& rng);
// Separable gaussian blur of one H x W plane with clamp-to-edge sampling.
void gaussian_blur_plane(std::span<const double> in, std::span<double> out, int h, int w,
                         double sigma);

}  // namespace metaopt
