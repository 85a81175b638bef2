#pragma once

// Seeded sampling helpers. These avoid std::uniform_int_distribution and
// friends so that a seed reproduces the same stream with any standard library.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <utility>

namespace probekit {

using Rng = std::mt19937_64;

/// Uniform index in [0, n). n must be positive.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  const std::uint64_t range = n;
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % range;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return static_cast<std::size_t>(x % range);
}

/// Uniform real in [lo, hi) from the top 53 bits.
inline double uniform_real(Rng& rng, double lo, double hi) {
  const double u = double(rng() >> 11) * (1.0 / 9007199254740992.0);
  return lo + (hi - lo) * u;
}

inline double standard_normal(Rng& rng) {
  // Box-Muller; one draw per call keeps the stream position simple to reason about.
  double u1 = uniform_real(rng, 0.0, 1.0);
  while (u1 <= 0.0) u1 = uniform_real(rng, 0.0, 1.0);
  const double u2 = uniform_real(rng, 0.0, 1.0);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

template <class T>
void shuffle(std::span<T> items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = uniform_index(rng, i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace probekit
