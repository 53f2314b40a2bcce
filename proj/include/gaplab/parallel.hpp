#pragma once

#include <cstddef>
#include <functional>

namespace gaplab {

/// Worker count: GAPLAB_THREADS when set (>= 1), else the hardware count.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) on up to thread_count() threads. Each index is
/// visited once; callers write results into per-index slots so the outcome
/// never depends on scheduling. The first exception is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace gaplab
