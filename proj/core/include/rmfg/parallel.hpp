#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <vector>

namespace rmfg {

void set_thread_count(int threads);
int thread_count();

// Runs body(i) for i in [0, n). Iterations must write disjoint outputs.
// If any iteration throws, the exception from the lowest index is rethrown
// after the loop finishes, so failures are schedule-independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace rmfg
