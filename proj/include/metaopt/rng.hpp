#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace metaopt {

// splitmix64 finalizer, used to turn arbitrary integers into well-mixed seeds.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Deterministic counter-free RNG with value semantics. A copy replays the
// exact same stream as the original, which is how paired evaluations share
// randomness: hand each side of the pair its own copy of one Rng.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(mix64(seed)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller. Exactly two engine draws per call, so the
  // stream position is easy to reason about; no cached spare value.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform integer in [0, n). n must be positive.
  std::int64_t below(std::int64_t n) {
    return static_cast<std::int64_t>(next_u64() % static_cast<std::uint64_t>(n));
  }

  // Uniform integer in [lo, hi], both ends inclusive.
  int uniform_int(int lo, int hi) { return lo + static_cast<int>(below(hi - lo + 1)); }

  // Derives an independent substream; advances this stream by one draw.
  Rng split() { return Rng(next_u64() ^ 0xda3e39cb94b95bdbULL); }

  // Exposed for std:: distributions (e.g. poisson) that want an engine.
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace metaopt
