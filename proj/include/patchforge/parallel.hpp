#pragma once

#include <cstddef>
#include <functional>

namespace patchforge {

// Global worker-count cap shared by all parallel sections. 0 means use
// hardware concurrency. The CLI wires --threads / PATCHFORGE_THREADS here.
void set_max_threads(unsigned n);
unsigned max_threads();

// Runs fn(i) for every i in [0, n). Items are claimed from a shared counter,
// so callers must keep per-item outputs independent; any reduction should be
// done afterwards in index order so results do not depend on thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace patchforge
