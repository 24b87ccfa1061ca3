#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace acl {

// Platform-independent random source. std::mt19937_64 output is fully
// specified by the standard; the distributions in <random> are not, so the
// few we need are implemented here on top of the raw engine.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform integer in [0, n). Rejection sampling keeps it unbiased.
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Standard normal via Box-Muller; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform01();
    } while (u1 <= 0.0);
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Independent stream derived from a base seed and a purpose tag (splitmix64).
  static std::uint64_t derive(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Purpose tags for Rng::derive.
namespace rng_stream {
inline constexpr std::uint64_t kCenters = 1;
inline constexpr std::uint64_t kSampleNoise = 2;
inline constexpr std::uint64_t kShuffle = 3;
inline constexpr std::uint64_t kSampler = 4;
inline constexpr std::uint64_t kDecoderInit = 5;
inline constexpr std::uint64_t kShift = 6;
}  // namespace rng_stream

}  // namespace acl
