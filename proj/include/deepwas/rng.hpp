#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace deepwas {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Counter-based seed derivation: the stream for (base, window, epoch, ...)
/// depends only on its coordinates, never on scheduling order.
inline std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc908ULL;
  for (std::uint64_t p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

using Rng = std::mt19937_64;

// Stream tags keep unrelated consumers of one base seed apart.
namespace stream {
inline constexpr std::uint64_t kProbe = 0x70726f6265ULL;
inline constexpr std::uint64_t kShuffle = 0x73687566ULL;
inline constexpr std::uint64_t kInit = 0x696e6974ULL;
inline constexpr std::uint64_t kLd = 0x6c64ULL;
inline constexpr std::uint64_t kAnnot = 0x616e6e6fULL;
inline constexpr std::uint64_t kEffects = 0x65666673ULL;
inline constexpr std::uint64_t kNoise = 0x6e6f6973ULL;
inline constexpr std::uint64_t kTruth = 0x7472757468ULL;
inline constexpr std::uint64_t kGenotype = 0x67656e6fULL;
}  // namespace stream

}  // namespace deepwas
