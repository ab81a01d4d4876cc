#pragma once

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace aupipe {

/// Uniform integer in [0, n) from raw engine output, by rejection. Unlike
/// std::uniform_int_distribution the result is the same on every standard
/// library.
inline std::uint64_t uniform_below(std::mt19937_64& rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

/// Fisher-Yates shuffle with a portable draw.
template <typename T>
void stable_shuffle(std::vector<T>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_below(rng, i)]);
}

}  // namespace aupipe
