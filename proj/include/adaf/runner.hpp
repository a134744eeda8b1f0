#pragma once

#include <exception>
#include <functional>
#include <stdexcept>
#include <thread>
#include <vector>

namespace adaf {

// Runs every job once. workers <= 1 executes inline in order; otherwise the
// job list is split into contiguous chunks, one thread each. Jobs must be
// independent (own models, own rngs, distinct output slots/paths), so results
// do not depend on the worker count. The first exception is rethrown.
inline void run_jobs(const std::vector<std::function<void()>>& jobs, int workers) {
  if (workers < 1) throw std::invalid_argument("runner: workers must be >= 1");
  const int n = static_cast<int>(jobs.size());
  if (n == 0) return;
  if (workers == 1 || n == 1) {
    for (const auto& j : jobs) j();
    return;
  }
  const int k = std::min(workers, n);
  std::vector<std::exception_ptr> errs(static_cast<std::size_t>(k));
  std::vector<std::thread> pool;
  for (int w = 0; w < k; ++w) {
    int lo = n * w / k, hi = n * (w + 1) / k;
    pool.emplace_back([&, lo, hi, w] {
      try {
        for (int i = lo; i < hi; ++i) jobs[static_cast<std::size_t>(i)]();
      } catch (...) {
        errs[static_cast<std::size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errs)
    if (e) std::rethrow_exception(e);
}

}  // namespace adaf
