#pragma once

#include <cstddef>
#include <functional>

namespace keyflow {

// Worker cap: KEYFLOW_THREADS if set and positive, otherwise hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n). Each index is visited exactly once; callers write
// results to per-index slots so output never depends on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace keyflow
