#pragma once

#include <cstddef>
#include <cstdint>

namespace gtep {

/// Portable counter-based generator.
///
/// Output k of a stream is splitmix64_mix(seed + (k + 1) * 0x9E3779B97F4A7C15),
/// so a sequence is fully determined by (seed, k) and is identical on every
/// platform. Uniform doubles take the top 53 bits; Gaussians use the
/// trigonometric Box-Muller transform and cache the second variate.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}
  /// Independent stream for a (seed, stream) pair.
  Rng(std::uint64_t seed, std::uint64_t stream) noexcept;

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n). n must be non-zero.
  std::size_t index(std::size_t n) noexcept;
  double normal() noexcept;
  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;

/// Seed for a named sub-stream, e.g. per-trial noise derived from a dataset seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept;

}  // namespace gtep
