#include "gtep/rng.hpp"

#include <cmath>
#include <numbers>

namespace gtep {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
__extension__ typedef unsigned __int128 u128;
}

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return splitmix64_mix(seed ^ splitmix64_mix(stream + kGolden));
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream) noexcept : seed_(derive_seed(seed, stream)) {}

std::uint64_t Rng::next_u64() noexcept {
  ++counter_;
  return splitmix64_mix(seed_ + counter_ * kGolden);
}

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::size_t Rng::index(std::size_t n) noexcept {
  const auto wide = static_cast<u128>(next_u64()) * n;
  return static_cast<std::size_t>(wide >> 64);
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - uniform();  // (0, 1]
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

}  // namespace gtep
