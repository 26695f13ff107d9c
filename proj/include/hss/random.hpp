#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace hss {

using Rng = std::mt19937_64;

/// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Stable across platforms and runs (unlike std::hash).
constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for the substream identified by (seed, purpose, index...).
constexpr std::uint64_t substream_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t i0 = 0,
                                       std::uint64_t i1 = 0) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ fnv1a(purpose));
  h = mix64(h ^ i0);
  h = mix64(h ^ (i1 + 0x51ed270b27e2b3c5ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::string_view purpose, std::uint64_t i0 = 0, std::uint64_t i1 = 0) {
  return Rng(substream_seed(seed, purpose, i0, i1));
}

}  // namespace hss
