#include "mobcast/numcore/rng.hpp"

#include <cmath>
#include <numbers>

namespace mobcast::numcore {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t Rng::next_u64() noexcept {
  ++counter_;
  return splitmix64_mix(seed_ + counter_ * kGolden);
}

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::below(std::uint64_t bound) noexcept {
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % bound;
}

double Rng::normal() noexcept {
  double u1 = uniform();
  const double u2 = uniform();
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::poisson(double lambda) noexcept {
  if (lambda <= 0.0) return 0;
  if (lambda < 30.0) {
    const double limit = std::exp(-lambda);
    std::uint64_t k = 0;
    double p = uniform();
    while (p > limit) {
      ++k;
      p *= uniform();
    }
    return k;
  }
  const double x = std::round(lambda + std::sqrt(lambda) * normal());
  return x <= 0.0 ? 0 : static_cast<std::uint64_t>(x);
}

std::uint64_t Rng::derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = splitmix64_mix(seed + kGolden);
  for (std::uint64_t t : tags) h = splitmix64_mix(h ^ (t + kGolden + (h << 6) + (h >> 2)));
  return h;
}

}  // namespace mobcast::numcore
