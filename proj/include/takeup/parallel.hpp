#pragma once

#include <cstddef>
#include <functional>

namespace takeup {

/// Worker count: TAKEUP_THREADS env var if set (clamped to >= 1), otherwise
/// the hardware concurrency.
int thread_count();

/// Work is always split into chunks of this fixed size, independent of the
/// worker count; callers may rely on begin being a multiple of it.
inline constexpr std::size_t parallel_chunk = 1024;

/// Runs fn(begin, end) over [0, n) split into parallel_chunk-sized pieces.
/// Chunk boundaries depend only on n — never on the worker count — so any
/// computation that writes disjoint per-index outputs (or reduces per-chunk
/// partials in chunk order) is bit-identical across thread counts.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

/// Deterministic parallel sum of fn(i) over [0, n): each chunk accumulates
/// left to right, chunks combine in chunk order. Bit-identical for any
/// worker count.
double parallel_sum(std::size_t n, const std::function<double(std::size_t)>& fn);

}  // namespace takeup
