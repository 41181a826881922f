#pragma once

#include <cstdint>

namespace gaitveil {

// Deterministic 64-bit splitmix generator (Steele/Lea/Flood constants).
// Every seeded component in the library draws from this generator so that a
// single integer seed reproduces identical weights and corpora across
// builds and platforms.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_range(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  // Uniform in [-s, s]; used for weight initialization with s = 1/sqrt(fan_in).
  double next_symmetric(double s) { return s * (2.0 * next_unit() - 1.0); }

 private:
  std::uint64_t state_;
};

// Derives an independent child seed from a parent seed and a salt. Distinct
// salts give decorrelated streams, which is how surrogate and evaluation
// embedders are kept seed-disjoint.
inline std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t salt) {
  SplitMix64 g(parent ^ (0x9E3779B97F4A7C15ULL * (salt + 1)));
  return g.next_u64();
}

}  // namespace gaitveil
