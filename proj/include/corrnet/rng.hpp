#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace corrnet {

// Counter-based pseudo-random generator. Draw i is a 64-bit hash of
// (key, i), so a stream is fully determined by its key, and independent
// child streams can be split off without touching the parent's counter.
// The integer stream is identical on every platform; floating-point
// transforms (gaussian, gumbel) additionally depend on libm rounding.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(mix64(seed + kGolden)) {}

  std::uint64_t next_u64() { return mix64(key_ + (++counter_) * kGolden); }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in (0, 1), clamped to [1e-300, 1 - 1e-16] so that log() and
  // log(-log()) stay finite.
  double next_open() {
    double u = next_double();
    if (u < 1e-300) u = 1e-300;
    if (u > 1.0 - 1e-16) u = 1.0 - 1e-16;
    return u;
  }

  // Standard normal via Box-Muller; consumes exactly two draws.
  double next_gaussian() {
    double u1 = next_open();
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(kTwoPi * u2);
  }

  // Standard Gumbel: -log(-log(u)) with u in the clamped open interval.
  double next_gumbel() { return -std::log(-std::log(next_open())); }

  // Unbiased integer in [0, n). Lemire multiply-shift with rejection.
  std::uint64_t next_below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::next_below: n must be positive");
    while (true) {
      std::uint64_t x = next_u64();
      __uint128_t m = static_cast<__uint128_t>(x) * n;
      auto lo = static_cast<std::uint64_t>(m);
      if (lo < n) {
        std::uint64_t t = (0 - n) % n;
        if (lo < t) continue;
      }
      return static_cast<std::uint64_t>(m >> 64);
    }
  }

  // Independent child stream; deterministic in (key, stream).
  Rng split(std::uint64_t stream) const {
    Rng child(0);
    child.key_ = mix64(key_ ^ mix64(stream + kGolden));
    child.counter_ = 0;
    return child;
  }

  std::uint64_t key() const { return key_; }

 private:
  static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr double kTwoPi = 6.283185307179586476925286766559;

  static std::uint64_t mix64(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ull;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBull;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace corrnet
