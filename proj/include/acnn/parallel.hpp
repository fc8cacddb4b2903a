#pragma once

#include <cstddef>
#include <functional>

namespace acnn {

// Worker cap: set_worker_count() if called, otherwise ACNK_THREADS, otherwise the hardware
// concurrency. Always at least one.
std::size_t worker_count();
void set_worker_count(std::size_t n);

// Runs body(i) for i in [0, n) on up to worker_count() threads using a static partition.
// Callers that reduce results must do so after the call, in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace acnn
