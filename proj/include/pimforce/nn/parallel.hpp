#pragma once

#include <cstddef>
#include <functional>

namespace pimforce::nn {

// Worker count: PIMFORCE_THREADS when set and positive, else the hardware
// concurrency. Read once per process.
std::size_t thread_count();

// Runs fn(i) for i in [0, n). Each index runs exactly once; callers keep
// results per index so outputs do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace pimforce::nn
