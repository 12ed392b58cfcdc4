#pragma once

#include <cstdint>
#include <span>
#include <string_view>

namespace atlas {

inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

// SplitMix64 finalizer. Stable across platforms; used wherever a value must be
// reproducible bit-for-bit (tile ranks, per-tree seeds, mock embeddings).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += kGoldenGamma;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(seed ^ mix64(stream));
}

inline std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                             std::uint64_t basis = 0xCBF29CE484222325ULL) noexcept {
  std::uint64_t h = basis;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001B3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t basis = 0xCBF29CE484222325ULL) noexcept {
  return fnv1a64(std::span(reinterpret_cast<const unsigned char*>(s.data()), s.size()), basis);
}

}  // namespace atlas
