#pragma once

#include <cstdint>
#include <functional>

namespace df {

// Worker count for internal parallelism. Resolution order: set_max_threads()
// if called, else DEPTHFORMER_THREADS, else hardware concurrency.
int max_threads();
void set_max_threads(int n);

// Runs fn over contiguous chunks of [0, n). Chunk assignment is static, so for
// kernels whose output elements are each written by exactly one chunk the
// result is bitwise independent of the thread count.
void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace df
