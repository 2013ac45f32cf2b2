#pragma once

#include <functional>
#include <string>

namespace dfdg {

/// Keeps freed tensor buffers in the heap instead of returning them to the
/// OS after every batch. Idempotent; no effect outside glibc.
void tune_allocator();

/// Runs fn(0..n-1) on up to `threads` workers. Each index runs exactly once;
/// the first exception is rethrown after all workers finish.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

using LogSink = std::function<void(const std::string&)>;

/// Progress lines from long-running operations go to the sink; none is
/// installed by default.
void set_log_sink(LogSink sink);
void log_line(const std::string& line);

}  // namespace dfdg
