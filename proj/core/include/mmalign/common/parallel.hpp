#pragma once

#include <cstddef>
#include <functional>

namespace mmalign {

/// Process-wide worker cap set by the CLI `--threads` flag. 0 = hardware
/// concurrency.
void set_max_threads(int n);
int max_threads();

/// Runs fn(i) for i in [0, n). Work is split into static contiguous ranges,
/// so writes to per-index slots are race-free and results do not depend on
/// scheduling. Exceptions from workers are rethrown on the caller.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mmalign
