#pragma once

#include <cstdint>
#include <initializer_list>

namespace mobcast::numcore {

// Counter-based generator. Draw k (0-based) of a stream seeded with s is
//
//   mix(s + (k + 1) * 0x9E3779B97F4A7C15)
//
// where mix is the SplitMix64 finalizer:
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   z =  z ^ (z >> 31)
//
// All arithmetic is modulo 2^64, so the raw stream is bit-exact on every
// platform. uniform() uses the top 53 bits: (x >> 11) * 2^-53.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) noexcept : seed_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

  std::uint64_t next_u64() noexcept;
  // Uniform in [0, 1).
  double uniform() noexcept;
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  // Uniform integer in [0, bound), bound > 0. Uses rejection to avoid modulo bias.
  std::uint64_t below(std::uint64_t bound) noexcept;
  // Standard normal via Box-Muller (one value per two uniforms, no caching).
  double normal() noexcept;
  // Poisson(lambda): Knuth's product method for lambda < 30, rounded normal
  // approximation clamped at 0 above.
  std::uint64_t poisson(double lambda) noexcept;

  // Deterministic child seed from a parent seed and a list of tags.
  static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) noexcept;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;

}  // namespace mobcast::numcore
