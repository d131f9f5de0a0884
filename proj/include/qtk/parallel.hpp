#pragma once

#include <cstddef>
#include <functional>

namespace qtk {

// Worker cap for loss evaluation. Initialised from QTK_THREADS when set,
// otherwise 1. Results never depend on this value.
std::size_t num_threads();
void set_num_threads(std::size_t n);

// Runs task(i) for i in [0, count) on up to num_threads() workers. The first
// exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t count, const std::function<void(std::size_t)>& task);

}  // namespace qtk
