#pragma once

#include <cstddef>
#include <functional>

namespace genrobust {

/// Worker cap from GENROBUST_THREADS; 0 or unset means serial deterministic mode.
std::size_t worker_threads();

/// Runs fn(0..n-1). Jobs must write disjoint outputs so the result is independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace genrobust
