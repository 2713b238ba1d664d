#pragma once

#include <cstdint>
#include <random>

namespace npss {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer. Used to derive independent sub-seeds from a master
/// seed so that every (stream, frame) or (epoch, batch, sequence) gets its
/// own generator regardless of evaluation order.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) noexcept {
  return mix64(seed ^ mix64(a + 0x632be59bd9b4e019ULL));
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) noexcept {
  return derive_seed(derive_seed(seed, a), b);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b,
                                    std::uint64_t c) noexcept {
  return derive_seed(derive_seed(seed, a, b), c);
}

inline Rng make_rng(std::uint64_t seed) { return Rng(seed); }

}  // namespace npss
