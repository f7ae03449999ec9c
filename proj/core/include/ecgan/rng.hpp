#pragma once

#include <array>
#include <cstdint>
#include <string_view>

namespace ecgan {

/// Deterministic xoshiro256** generator seeded through splitmix64.
///
/// The scalar stream is fully defined by this class (no std:: distributions),
/// so a seed reproduces bit-identical values on every platform this builds on.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  /// Standard normal via Box-Muller; the second value of each pair is cached.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Independent child stream; `fork("shuffle")` on equal parents yields equal children.
  Rng fork(std::string_view stream) const;

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
  double cached_normal_ = 0.0;
  bool has_cached_normal_ = false;
};

}  // namespace ecgan
