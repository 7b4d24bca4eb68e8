#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace dshape {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Tasks must be
// independent; any per-task randomness has to be derived from task-indexed
// seeds so results never depend on scheduling. The first exception thrown by
// a task is rethrown after all threads join.
inline void parallel_for(std::size_t n, int workers,
                         const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (workers < 1) workers = 1;
  const int n_threads = static_cast<int>(
      std::min<std::size_t>(static_cast<std::size_t>(workers), n));
  if (n_threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(n_threads);
  for (int t = 0; t < n_threads; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// Worker count: explicit request, overridable through DSHAPE_WORKERS.
inline int resolve_workers(int requested) {
  if (const char* env = std::getenv("DSHAPE_WORKERS")) {
    const int v = std::atoi(env);
    if (v >= 1) return v;
  }
  return requested >= 1 ? requested : 1;
}

}  // namespace dshape
