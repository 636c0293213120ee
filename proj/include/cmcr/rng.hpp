#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace cmcr {

// Counter-based deterministic RNG. Draw n is a hash of (seed, n), so streams
// can be forked by tag without consuming state from the parent; every module
// derives its own independent stream from one root seed.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : seed_(seed), counter_(0) {}

  // Independent child stream; does not advance this stream.
  SplitRng fork(std::uint64_t tag) const {
    return SplitRng(mix(seed_ ^ 0x632be59bd9b4e019ULL, tag));
  }

  std::uint64_t next_u64() { return mix(seed_, counter_++); }

  // Uniform in [0, 1).
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

  // Standard normal via Box-Muller (two draws per sample, no cached state).
  double next_normal() {
    const double u1 = 1.0 - next_uniform();  // (0, 1]
    const double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Uniform index in [0, n).
  std::size_t next_index(std::size_t n) {
    return static_cast<std::size_t>(
        (static_cast<unsigned __int128>(next_u64()) * static_cast<unsigned __int128>(n)) >> 64);
  }

  // k distinct indices from [0, n), order randomized (partial Fisher-Yates).
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    if (k > n) k = n;
    for (std::size_t i = 0; i < k; ++i) {
      const std::size_t j = i + next_index(n - i);
      std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    return pool;
  }

 private:
  // splitmix64 finalizer over seed + (n+1) * golden gamma.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t n) {
    std::uint64_t z = seed + (n + 1) * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t counter_;
};

}  // namespace cmcr
