#pragma once

#include <cstddef>
#include <functional>

namespace il7 {

/// Worker count: IL7_WORKERS when set (>= 1), else the hardware concurrency.
std::size_t worker_count();

/// Run fn(0..n-1) on up to `workers` threads (0: worker_count()). Each index
/// runs exactly once; callers write results into per-index slots and reduce in
/// index order, so results do not depend on scheduling. The exception of the
/// lowest failing index is rethrown.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn, std::size_t workers = 0);

}  // namespace il7
