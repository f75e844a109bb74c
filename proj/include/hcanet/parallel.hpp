#pragma once

// Worker pool size comes from HCANET_THREADS: unset uses the hardware count,
// 0 runs everything inline on the calling thread. Work items must be
// independent; results never depend on the thread count.

#include <cstddef>
#include <functional>

namespace hcanet {

/// 0 means inline execution.
std::size_t worker_threads();

/// Overrides HCANET_THREADS for this process; negative restores the env value.
void set_worker_threads(long n);

/// Runs fn(i) for i in [0, n). Exceptions are rethrown on the caller (first by index).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace hcanet
