#pragma once

#include <cstdint>
#include <random>

namespace bsa {

/// Seed scrambler (SplitMix64 finalizer). Adjacent seeds map to unrelated
/// 64-bit words, so seeds s, s+1, ... give independent generator streams.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// The generator used by every simulation in the library. Each run owns one;
/// it is a value type and may be moved across threads.
class Rng {
 public:
  using result_type = std::mt19937_64::result_type;

  explicit Rng(std::uint64_t seed) : seed_(seed) {
    const std::uint64_t a = mix_seed(seed);
    const std::uint64_t b = mix_seed(a);
    std::seed_seq seq{static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                      static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
    engine_.seed(seq);
  }

  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return engine_(); }

  std::uint64_t seed() const noexcept { return seed_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double normal() { return std::normal_distribution<double>{}(engine_); }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// Stream for replicate `index` of an experiment seeded with `base`.
inline Rng replicate_rng(std::uint64_t base, std::uint64_t index) { return Rng(base + index); }

}  // namespace bsa
