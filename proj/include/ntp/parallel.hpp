#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ntp {

/// Process-wide worker count. 0 means hardware concurrency.
std::size_t worker_count();
void set_worker_count(std::size_t n);

/// Runs fn(i) for i in [0, n). Work is split into fixed-index chunks and the
/// chunk assignment is independent of the number of workers, so any
/// order-sensitive caller can reduce per-chunk results deterministically.
/// Exceptions from fn propagate to the caller (first one wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Chunked variant: fn(chunk_index, begin, end) over [0, n) split into
/// n_chunks contiguous ranges. Deterministic partition for any worker count.
void parallel_chunks(std::size_t n, std::size_t n_chunks,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

}  // namespace ntp
