#pragma once

#include <cstdint>
#include <random>

namespace ualqe {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent generator for (seed, stream). Streams never share state, so
/// drawing from one never shifts another.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream) {
  return Rng(splitmix64(splitmix64(seed) ^ splitmix64(stream + 0x632be59bd9b4e019ULL)));
}

namespace streams {
inline constexpr std::uint64_t kActorInit = 1;
inline constexpr std::uint64_t kCriticInit = 2;
inline constexpr std::uint64_t kEnsembleInit = 3;
inline constexpr std::uint64_t kHashProjection = 4;
inline constexpr std::uint64_t kEnvironment = 5;
inline constexpr std::uint64_t kExploration = 6;
inline constexpr std::uint64_t kReplaySample = 7;
inline constexpr std::uint64_t kRandomRemoval = 8;
inline constexpr std::uint64_t kEvaluation = 9;
inline constexpr std::uint64_t kRankScan = 10;
inline constexpr std::uint64_t kEnsembleFit = 11;
}  // namespace streams

}  // namespace ualqe
