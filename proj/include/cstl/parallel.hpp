#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <stdexcept>
#include <thread>
#include <vector>

namespace cstl {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{1};
  return cap;
}
inline thread_local int parallel_depth = 0;
}  // namespace detail

// Global worker cap. 1 (the default) runs everything on the calling thread
// and is the deterministic mode promised to `--threads 1`.
inline void set_max_threads(int n) {
  if (n < 1) throw std::invalid_argument("set_max_threads: n must be >= 1");
  detail::thread_cap().store(n);
}

inline int max_threads() { return detail::thread_cap().load(); }

// Statically partitioned parallel loop over [begin, end). Each index is
// handled by exactly one worker; nested calls run serially on the caller.
template <typename F>
void parallel_for(std::int64_t begin, std::int64_t end, F&& fn) {
  const std::int64_t n = end - begin;
  if (n <= 0) return;
  const int cap = max_threads();
  if (cap <= 1 || n == 1 || detail::parallel_depth > 0) {
    for (std::int64_t i = begin; i < end; ++i) fn(i);
    return;
  }
  const int workers = static_cast<int>(std::min<std::int64_t>(cap, n));
  const std::int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int t = 0; t < workers; ++t) {
    const std::int64_t lo = begin + t * chunk;
    const std::int64_t hi = std::min<std::int64_t>(lo + chunk, end);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      detail::parallel_depth = 1;
      for (std::int64_t i = lo; i < hi; ++i) fn(i);
      detail::parallel_depth = 0;
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace cstl
