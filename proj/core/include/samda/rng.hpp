#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numbers>

namespace samda {

// SplitMix64 finalizer; a bijective mix of one 64-bit word.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives a stream key from a base seed and any number of integer labels.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> labels) noexcept {
  std::uint64_t h = mix64(seed);
  for (auto l : labels) h = mix64(h ^ mix64(l + 0x632be59bd9b4e019ULL));
  return h;
}

// Counter-based generator: draw i is mix64(key, i), so a stream is fully
// described by (key, counter) and can be replayed from any position.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) noexcept
      : key_(mix64(key)), counter_(counter) {}

  std::uint64_t next_u64() noexcept { return mix64(key_ ^ mix64(counter_++)); }

  // Uniform in [0, 1) with 53 bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) noexcept {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Box-Muller; consumes two draws per call so replay stays aligned.
  double normal() noexcept {
    double u1 = uniform();
    const double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

}  // namespace samda
