#pragma once

#include <cstdint>
#include <random>

namespace takeup {

/// Derives an independent engine for (master seed, stream id) pairs so that
/// per-replication / per-household streams never depend on evaluation order.
/// SplitMix64 over the combined word gives well-spread seeds from small ints.
inline std::mt19937_64 substream(std::uint64_t master_seed, std::uint64_t stream_id) {
  std::uint64_t z = master_seed + 0x9e3779b97f4a7c15ULL * (stream_id + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return std::mt19937_64(z);
}

}  // namespace takeup
