#pragma once

// Deterministic fork-join helper: tasks are indexed, each task writes only
// its own slot, so results are identical for any worker count.

#include <cstdint>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace rwre {

inline int default_workers() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

template <class F>
void parallel_for(int64_t n, int workers, F&& fn) {
  if (n <= 0) return;
  if (workers <= 1 || n == 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int w = static_cast<int>(std::min<int64_t>(workers, n));
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(w));
  std::exception_ptr err;
  std::mutex err_mu;
  for (int t = 0; t < w; ++t) {
    pool.emplace_back([&, t]() {
      try {
        // strided assignment keeps long tasks spread across workers
        for (int64_t i = t; i < n; i += w) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace rwre
