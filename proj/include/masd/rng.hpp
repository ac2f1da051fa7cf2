#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace masd {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = a ^ (b * 0x9E3779B97F4A7C15ull);
  x ^= x >> 29;
  x *= 0xBF58476D1CE4E5B9ull;
  x ^= x >> 32;
  return x;
}

// Deterministic random stream. mt19937 supplies raw 32-bit words; the
// derived draws (uniform, normal, shuffle) are spelled out here instead of
// using std::*_distribution so that byte-identical sequences do not depend
// on the standard library implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed)
      : seed_(seed), engine_(static_cast<std::uint32_t>(seed ^ (seed >> 32))) {}

  std::uint32_t next_u32() { return engine_(); }

  // Uniform in [0,1) with 32-bit resolution.
  float uniform() { return static_cast<float>(next_u32() * (1.0 / 4294967296.0)); }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive (modulo bias < 2^-32).
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    std::uint64_t span = hi - lo + 1;
    std::uint64_t word = (static_cast<std::uint64_t>(next_u32()) << 32) | next_u32();
    return lo + word % span;
  }

  // Box-Muller, cosine branch only.
  float normal(float mean = 0.0f, float stddev = 1.0f) {
    double u1 = 0.0;
    do {
      u1 = next_u32() * (1.0 / 4294967296.0);
    } while (u1 <= 1e-12);
    double u2 = next_u32() * (1.0 / 4294967296.0);
    double z = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
    return mean + stddev * static_cast<float>(z);
  }

  // Fisher-Yates.
  template <typename T>
  void shuffle(std::vector<T>& items) {
    if (items.empty()) return;
    for (std::size_t i = items.size() - 1; i > 0; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, i));
      std::swap(items[i], items[j]);
    }
  }

  // Independent child stream. Gives each sample / stage its own sequence so
  // adding draws in one place does not shift the others.
  Rng fork(std::uint64_t salt) const { return Rng(mix_seed(seed_, salt)); }

 private:
  std::uint64_t seed_;
  std::mt19937 engine_;
};

}  // namespace masd
