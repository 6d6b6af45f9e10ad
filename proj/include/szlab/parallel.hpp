#pragma once

#include <cstddef>
#include <functional>

namespace szlab {

/// Worker count used by parallel_for; 1 means run inline. Defaults to the
/// SZLAB_THREADS environment variable, else 1.
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs body(i) for i in [0, n) over contiguous chunks. Callers write results
/// into per-index slots and reduce afterwards in index order, which keeps the
/// output independent of the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace szlab
