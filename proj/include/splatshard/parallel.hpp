#pragma once

#include <cstddef>
#include <functional>

namespace splatshard {

/// Worker count: the explicit override if set, else BLITZ_THREADS, else hardware concurrency.
int thread_count();

/// Overrides the worker count for this process; 0 restores the environment default.
void set_thread_count(int n);

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs; results are
/// independent of scheduling.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Keeps frame-sized buffers on the heap instead of mapping and unmapping them every step.
/// A no-op outside glibc.
void keep_frame_buffers_on_heap();

}  // namespace splatshard
