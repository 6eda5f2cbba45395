#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace mcot {

// Purposes used to split a master seed into independent streams.
enum class StreamPurpose : std::uint64_t {
  population = 1,
  drains_training = 2,
  drains_validation = 3,
  solver = 4,
  evaluation = 5,
  initial_state = 6,
  online = 7,
  testing = 99,
};

inline constexpr std::uint64_t splitmix_mix(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Counter-based generator: the k-th output is a pure function of (key, k).
// Streams are addressed by a path of integers (seed, purpose, agent, iteration, ...),
// so results never depend on the order in which workers consume them.
class Stream {
public:
  using result_type = std::uint64_t;

  explicit Stream(std::uint64_t key) noexcept : key_(key) {}

  static Stream derive(std::uint64_t seed, std::initializer_list<std::uint64_t> path) noexcept {
    std::uint64_t key = splitmix_mix(seed + kGamma);
    for (std::uint64_t p : path) key = splitmix_mix(key ^ splitmix_mix(p + kGamma));
    return Stream(key);
  }
  static Stream derive(std::uint64_t seed, StreamPurpose purpose,
                       std::uint64_t a = 0, std::uint64_t b = 0) noexcept {
    return derive(seed, {static_cast<std::uint64_t>(purpose), a, b});
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept { return splitmix_mix(key_ + (++counter_) * kGamma); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Unbiased integer in [0, n), Lemire's multiply-shift with rejection.
  std::uint64_t below(std::uint64_t n) noexcept {
    if (n <= 1) return 0;
    __uint128_t m = static_cast<__uint128_t>((*this)()) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
      const std::uint64_t threshold = (0 - n) % n;
      while (low < threshold) {
        m = static_cast<__uint128_t>((*this)()) * n;
        low = static_cast<std::uint64_t>(m);
      }
    }
    return static_cast<std::uint64_t>(m >> 64);
  }

  double exponential(double mean) noexcept { return -mean * std::log1p(-uniform()); }

  // Knuth's product method; the drain model only uses small means.
  int poisson(double mean) noexcept {
    if (mean <= 0.0) return 0;
    const double limit = std::exp(-mean);
    int k = 0;
    double prod = uniform();
    while (prod > limit) {
      ++k;
      prod *= uniform();
    }
    return k;
  }

  std::uint64_t counter() const noexcept { return counter_; }

private:
  static constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

} // namespace mcot
