#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace midl {

// splitmix64 (Steele/Lea/Flood). Pinned project-wide so every seeded sequence
// is reproducible across platforms: the i-th output is a pure function of the
// seed, output_i = mix(seed + (i+1) * 0x9E3779B97F4A7C15).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Standard normal via Box-Muller (cosine branch; both uniforms drawn fresh).
  double next_gaussian() {
    double u1 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform in [0, n). Modulo reduction; bias < n / 2^64 is irrelevant here.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

 private:
  std::uint64_t state_;
};

// Derives an independent sub-seed for a named sub-stream (data vs. schedule
// vs. shuffle ...) so the draws of one stream never shift another.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt) {
  std::uint64_t z = base ^ (salt * 0x9E3779B97F4A7C15ull + 0xD1B54A32D192ED03ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Named sub-stream salts.
enum : std::uint64_t {
  kSeedInit = 1,      // parameter initialisation
  kSeedData = 2,      // synthetic sample generation
  kSeedSplit = 3,     // train/val permutation
  kSeedSchedule = 4,  // modality assignment
  kSeedShuffle = 5,   // stream sample order
  kSeedPretrain = 6,  // pretraining batch order
  kSeedShift = 7,     // domain-shift offsets
  kSeedWarmup = 8,    // warm-up stream
};

// Fisher-Yates with the pinned generator (std::shuffle is not portable).
inline std::vector<int> shuffled_indices(int n, Rng& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(i) + 1));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  return idx;
}

}  // namespace midl
