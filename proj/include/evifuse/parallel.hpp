#pragma once

#include <cstddef>
#include <functional>

namespace evifuse {

/// Worker cap from EVIFUSE_THREADS (0 or unset = hardware concurrency).
int worker_count();

/// Runs fn(i) for i in [0, n). Each index is handled exactly once; callers
/// write results into per-index slots and reduce in index order afterwards,
/// so results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace evifuse
