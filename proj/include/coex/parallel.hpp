#pragma once

#include <cstddef>
#include <functional>

namespace coex {

// Worker count used by parallel_for. Defaults to COEXRECON_THREADS when set,
// otherwise 1.
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Runs body(i) for i in [begin, end) over contiguous chunks. Callers must
// write only to disjoint outputs so results do not depend on the schedule.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t)>& body);

}  // namespace coex
