#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace plainusr {

namespace detail {
inline std::atomic<int>& thread_count_slot() {
  static std::atomic<int> count{1};
  return count;
}
}  // namespace detail

// Number of worker threads the operators may use. Defaults to 1.
inline int num_threads() { return detail::thread_count_slot().load(std::memory_order_relaxed); }

inline void set_num_threads(int n) {
  detail::thread_count_slot().store(std::max(1, n), std::memory_order_relaxed);
}

// Runs fn(i) for i in [0, count). Work is split into contiguous static chunks,
// so each index is processed by exactly one thread and its result does not
// depend on the thread count.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn, std::size_t min_per_thread = 1) {
  const std::size_t want = static_cast<std::size_t>(num_threads());
  const std::size_t workers =
      std::min(want, std::max<std::size_t>(1, count / std::max<std::size_t>(1, min_per_thread)));
  if (workers <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t t = 0; t < workers; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&, lo, hi] {
      try {
        for (std::size_t i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace plainusr
