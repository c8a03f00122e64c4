#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "latentcl/numcore/tensor.hpp"

namespace latentcl {

/// Counter-based generator: draw i is a pure function of (seed, i).
///
/// Parallel work derives independent child streams with derive(), so a
/// parallel evaluation reproduces the serial draws exactly. Instances are
/// cheap values and must not be shared across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 42) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() { return mix(seed_ + (++counter_) * kGolden); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n), rejection-sampled so it is exactly unbiased.
  std::uint64_t uniform_int(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Standard normal via Box-Muller; consumes two counter steps per draw.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::vector<double> normal_vector(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = normal();
    return v;
  }

  // Independent child stream; does not advance this generator.
  Rng derive(std::uint64_t stream) const { return Rng(mix(seed_ ^ mix(stream + kGolden))); }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

/// Tensor of i.i.d. N(0, 1) entries.
inline Tensor normal_sample(Rng& rng, Shape shape) {
  const auto n = detail::numel_of(shape);
  return Tensor::from(std::move(shape), rng.normal_vector(n));
}

}  // namespace latentcl
