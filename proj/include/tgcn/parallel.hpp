#pragma once

#include <cstddef>
#include <functional>

namespace tgcn {

// Worker cap: STGRAPH_THREADS when set, otherwise the hardware count,
// never more than `jobs`.
std::size_t worker_count(std::size_t jobs);

// Runs fn(0..n-1), possibly on several threads. Units must be independent;
// determinism comes from indexing the outputs, not the schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tgcn
