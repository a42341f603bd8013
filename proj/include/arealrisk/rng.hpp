#ifndef AREALRISK_RNG_HPP
#define AREALRISK_RNG_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace arealrisk {

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
} // namespace detail

/// Deterministic sub-seed for a labeled stream, e.g. ("replicate", 17).
/// Stable across platforms and runs: FNV-1a over the label, mixed with the
/// master seed and index through splitmix64.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label,
                                 std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : label) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return detail::splitmix64(detail::splitmix64(master ^ h) + index);
}

} // namespace arealrisk

#endif // AREALRISK_RNG_HPP
