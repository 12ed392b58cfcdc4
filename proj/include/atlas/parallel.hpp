#pragma once

#include <cstddef>
#include <functional>

namespace atlas {

// Number of worker threads used by parallel_for. Defaults to the hardware
// concurrency, overridable with ATLAS_THREADS or set_thread_count().
std::size_t thread_count();
void set_thread_count(std::size_t n);

// Calls fn(begin, end) over contiguous chunks of [0, n). Chunk boundaries depend
// only on n and the thread count; callers that need bit-reproducible results
// write per-index outputs and reduce serially afterwards.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace atlas
