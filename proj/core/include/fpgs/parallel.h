#pragma once

#include <cstddef>
#include <functional>

namespace fpgs {

/// Worker count used by parallel_for. Defaults to FPGS_THREADS, else hardware concurrency.
int thread_count();
/// Overrides the worker count for the process; n <= 0 restores the default.
void set_thread_count(int n);

/// Runs fn(i) for i in [0, n) on up to thread_count() workers with dynamic scheduling.
/// Callers must make results independent of which worker ran which index.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

/// Fixed chunk size for row-batched kernels. Results never depend on the thread count
/// because every kernel sees the same chunk boundaries.
inline constexpr size_t kRowChunk = 1024;

}  // namespace fpgs
