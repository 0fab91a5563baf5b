#pragma once

#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "iclb/hash.hpp"

namespace iclb {

using Rng = std::mt19937_64;

/// Derives an independent generator for a named purpose ("task-gen", "split",
/// "shuffle", "mlp-init", "random-sampling", ...) from a master seed. Adding a
/// new consumer never shifts the draws of an existing one.
inline std::uint64_t substream_seed(std::uint64_t master, std::string_view name) {
  std::string material(8, '\0');
  for (int b = 0; b < 8; ++b) material[b] = static_cast<char>((master >> (8 * b)) & 0xFF);
  material.append(name);
  const Digest d = sha256(material);
  std::uint64_t out = 0;
  for (int b = 0; b < 8; ++b) out |= static_cast<std::uint64_t>(d[b]) << (8 * b);
  return out;
}

inline Rng substream(std::uint64_t master, std::string_view name) {
  return Rng(substream_seed(master, name));
}

/// Uniform real in [lo, hi) from the top 53 bits of one draw.
inline double uniform_real(Rng& rng, double lo, double hi) {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  return lo + (hi - lo) * u;
}

/// Unbiased integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  const std::uint64_t limit = Rng::max() - Rng::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

template <typename T>
void fisher_yates(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace iclb
