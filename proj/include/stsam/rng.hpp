#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

namespace stsam {

// All randomness in the project goes through these helpers instead of the
// std distributions, so that every stream is a pure function of its seed
// regardless of the standard library build.

inline double canonical_u01(std::mt19937_64& rng) {
  // 53-bit mantissa, uniform in [0, 1)
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * canonical_u01(rng);
}

inline double normal01(std::mt19937_64& rng) {
  // Box-Muller; u1 in (0, 1] keeps the log finite
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = canonical_u01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline std::uint64_t bounded_u64(std::mt19937_64& rng, std::uint64_t n) {
  // rejection sampling, no modulo bias
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

// Fisher-Yates with an explicit draw order.
template <typename T>
void shuffle_inplace(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[bounded_u64(rng, i)]);
  }
}

}  // namespace stsam
