#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace adasample {

// Worker cap shared by all kernels. Defaults to the hardware concurrency,
// overridden by ADASAMPLE_THREADS or set_thread_count().
int thread_count();
void set_thread_count(int n);

// Static contiguous partition of [begin, end). Each index is processed by
// exactly one worker, so kernels that write only to index-owned outputs
// produce the same result for any thread count.
template <typename Fn>
void parallel_for(int begin, int end, Fn&& fn) {
  const int n = end - begin;
  if (n <= 0) return;
  const int workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (int i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const int chunk = (n + workers - 1) / workers;
  for (int w = 1; w < workers; ++w) {
    const int lo = begin + w * chunk;
    const int hi = std::min(end, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (int i = lo; i < hi; ++i) fn(i);
    });
  }
  for (int i = begin; i < std::min(end, begin + chunk); ++i) fn(i);
  for (auto& t : pool) t.join();
}

}  // namespace adasample
