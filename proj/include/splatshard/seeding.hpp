#pragma once

#include <cstdint>

namespace splatshard {

/// splitmix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Stateless stream seed for (seed, purpose, index); lets a resumed run redraw identical numbers.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t purpose, std::uint64_t index) {
  return mix64(mix64(mix64(seed) ^ purpose) ^ index);
}

namespace stream {
inline constexpr std::uint64_t kBatch = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kPrune = 3;
inline constexpr std::uint64_t kFixture = 4;
}  // namespace stream

}  // namespace splatshard
