#pragma once
// Deterministic fork-join parallelism. Work is split into contiguous index
// chunks, one per worker, and every result lands in a caller-owned slot
// keyed by index, so outputs never depend on scheduling or thread count.

#include <cstddef>
#include <functional>

namespace mtms {

// Global worker cap (the CLI --threads flag). 0 means hardware concurrency.
void set_thread_cap(std::size_t n);
std::size_t thread_cap();

// Runs fn(i) for i in [0, n). threads = 0 uses the global cap. The first
// exception (lowest chunk index) is rethrown after all workers join.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn,
                  std::size_t threads = 0);

} // namespace mtms
