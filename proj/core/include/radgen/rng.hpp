#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace radgen {

// Counter-based generator: draw k of stream `seed` is splitmix64(seed, k).
// The output depends only on (seed, counter), so streams are identical on
// every platform and can be forked without shared state.
class Rng {
 public:
  static constexpr const char* kAlgorithm = "splitmix64-counter";

  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Standard normal via Box-Muller (one draw consumes two uniforms).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  // Independent child stream keyed by `tag`.
  Rng fork(std::uint64_t tag) const;

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
// Order-sensitive combination of two 64-bit keys.
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);
// FNV-1a over bytes; stable across platforms.
std::uint64_t fnv1a64(const void* data, std::size_t size);

}  // namespace radgen
