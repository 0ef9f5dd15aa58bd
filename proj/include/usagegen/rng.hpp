#pragma once

#include <cstdint>
#include <span>

#include "usagegen/diagnostics.hpp"

namespace usagegen {

// Deterministic PRNG stack. The exact bit-for-bit behavior is part of the
// reproducibility contract: same seed, same draws, on every platform.

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

class Xoshiro256StarStar {
 public:
  // State is seeded by four successive SplitMix64 outputs.
  explicit Xoshiro256StarStar(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& w : s_) w = sm.next();
  }

  std::uint64_t next() {
    auto rotl = [](std::uint64_t x, int k) {
      return (x << k) | (x >> (64 - k));
    };
    const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit mantissa.
  double uniform() { return (next() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t s_[4];
};

/// Independent stream for worker i: a single SplitMix64 step of seed XOR i.
inline std::uint64_t child_seed(std::uint64_t seed, std::uint64_t i) {
  return SplitMix64(seed ^ i).next();
}

/// Inverse-CDF draw over nonnegative weights, one uniform consumed per call.
/// Returns the first index whose cumulative weight strictly exceeds u * W.
inline std::size_t draw_categorical(Xoshiro256StarStar& rng,
                                    std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  if (!(total > 0.0))
    throw UsageError(codes::zero_context,
                     "categorical draw over all-zero weights");
  const double target = rng.uniform() * total;
  double cum = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    cum += weights[i];
    if (cum > target) return i;
  }
  // Reachable only through floating-point shortfall; the last positive
  // weight is the correct bucket in that case.
  for (std::size_t i = weights.size(); i-- > 0;)
    if (weights[i] > 0.0) return i;
  return weights.size() - 1;
}

}  // namespace usagegen
