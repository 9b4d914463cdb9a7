#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace convens {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; the mixing step behind all seed derivation.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_tag(std::string_view tag) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001B3ULL;
  }
  return h;
}

/// Derive an independent child seed from (parent, role, index).
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::string_view role,
                                    std::uint64_t index = 0) {
  return mix64(mix64(parent ^ hash_tag(role)) + mix64(index + 0x632BE59BD9B4E019ULL));
}

inline Rng make_rng(std::uint64_t seed) { return Rng(mix64(seed)); }

}  // namespace convens
