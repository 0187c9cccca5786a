#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace kdrf {

// Splittable counter-seeded generator (splitmix64 core). Every consumer
// derives its own named substream from (seed, stream, step), so replaying a
// step after a checkpoint resume reproduces the exact same draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(mix(seed ^ 0x9e3779b97f4a7c15ull)) {}

  // Derive an independent substream. Streams are identified by small tags
  // (e.g. step number, purpose id); mixing makes them statistically disjoint.
  Rng split(std::uint64_t a, std::uint64_t b = 0) const {
    return Rng(mix(state_ ^ mix(a + 0x632be59bd9b4e019ull) ^ mix(b + 0x7b2172a3aa1d85a7ull)));
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  // Uniform in [0, 1). 53-bit mantissa, identical on every platform.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; uses two uniforms per pair, caches the second value.
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  std::uint64_t state_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace kdrf
