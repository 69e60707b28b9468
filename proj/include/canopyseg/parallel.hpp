#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace canopyseg {

// Worker cap: CANOPYSEG_THREADS if set, else hardware concurrency.
inline int max_threads() {
  if (const char* env = std::getenv("CANOPYSEG_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is handled
// by exactly one worker and chunks are disjoint, so results are independent of
// the degree of parallelism as long as fn writes only to index-owned state.
template <class Fn>
void parallel_for(std::int64_t n, Fn&& fn, int threads = 0) {
  if (n <= 0) return;
  if (threads <= 0) threads = max_threads();
  threads = static_cast<int>(std::min<std::int64_t>(threads, n));
  if (threads <= 1) {
    fn(std::int64_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(threads));
  std::int64_t chunk = (n + threads - 1) / threads;
  for (int t = 0; t < threads; ++t) {
    std::int64_t lo = t * chunk;
    std::int64_t hi = std::min<std::int64_t>(lo + chunk, n);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] { fn(lo, hi); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace canopyseg
