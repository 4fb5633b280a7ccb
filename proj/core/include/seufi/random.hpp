#pragma once

#include <cstdint>
#include <random>

// Portable seeded randomness. std::mt19937_64's output sequence is fixed by the
// standard but the std distributions are not, so the mappings live here.

namespace seufi {

inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Mixes a stream tag into a seed so sibling streams are uncorrelated.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  return splitmix64(seed ^ splitmix64(tag + 0x632BE59BD9B4E019ULL));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  /// Uniform integer in [0, bound). bound must be positive.
  std::uint64_t below(std::uint64_t bound) {
    // Rejection sampling on the top of the range keeps the result unbiased.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t x = 0;
    do {
      x = engine_();
    } while (x >= limit);
    return x % bound;
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

  /// Normal(0, sigma) rejected outside [-limit*sigma, limit*sigma].
  double truncated_normal(double sigma, double limit = 2.0);

 private:
  std::mt19937_64 engine_;
};

}  // namespace seufi
