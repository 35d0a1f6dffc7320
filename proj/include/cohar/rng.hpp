#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>

namespace cohar {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Reproducible generator: xoshiro256** whose 256-bit state is filled by four
/// successive splitmix64 outputs of the seed. Every derived quantity
/// (uniforms, normals, Gumbel draws, shuffles) is computed from next_u64()
/// with the formulas below, so a seed fixes the whole stream on any platform
/// with IEEE-754 doubles and a correctly rounded log/cos.
///
/// Named sub-streams are derived from the seed, not from the current state:
/// `SeededRng(s).stream("init")` is the same generator no matter how many
/// draws were taken from the parent.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) noexcept : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& w : s_) w = splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
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

  /// Uniform on the open interval (0, 1): ((x >> 11) + 0.5) * 2^-53.
  double uniform_open() noexcept {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform_open(); }

  /// Unbiased integer in [0, n) by rejection; n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  /// Standard normal via Box-Muller (cosine branch only, two uniforms per draw).
  double normal() noexcept {
    const double u1 = uniform_open();
    const double u2 = uniform_open();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Standard Gumbel: -ln(-ln u), u ~ U(0,1) exclusive.
  double gumbel() noexcept { return -std::log(-std::log(uniform_open())); }

  SeededRng stream(std::string_view name) const noexcept {
    std::uint64_t mix = seed_ ^ fnv1a64(name);
    return SeededRng(splitmix64(mix));
  }

  template <typename It>
  void shuffle(It first, It last) noexcept {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t seed_;
  std::uint64_t s_[4];
};

}  // namespace cohar
