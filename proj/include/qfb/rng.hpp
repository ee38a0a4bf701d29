#pragma once

#include <cstdint>

namespace qfb {

/// SplitMix64 finalizer; good avalanche, used to decorrelate derived seeds.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed for repetition `index`, sub-stream `stream` of a run. Independent of
/// how repetitions are distributed across workers.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream = 0) {
  return splitmix64(splitmix64(master ^ splitmix64(index)) + stream * 0xD1B54A32D192ED03ULL);
}

}  // namespace qfb
