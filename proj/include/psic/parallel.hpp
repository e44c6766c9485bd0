#pragma once

#include <cstddef>
#include <functional>

namespace psic {

// Worker count: PSI_CODEC_THREADS when set to a positive integer, otherwise
// the hardware concurrency (at least 1).
std::size_t worker_count();

// Runs fn(i) for i in [0, n) across up to worker_count() threads. Work items
// are claimed dynamically; callers write results by index so output order
// does not depend on scheduling. The first exception thrown is rethrown.
// Calls made from inside a running parallel_for execute serially.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace psic
