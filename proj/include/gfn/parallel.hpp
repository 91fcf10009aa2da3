#pragma once

#include <cstddef>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace gfn {

inline int resolve_threads(int requested, size_t items) {
  int t = requested;
  if (t <= 0) {
    unsigned hw = std::thread::hardware_concurrency();
    t = hw > 0 ? static_cast<int>(hw) : 1;
  }
  if (static_cast<size_t>(t) > items) t = static_cast<int>(items);
  return t < 1 ? 1 : t;
}

// Static contiguous partition of [0, n) across `threads` workers:
// fn(worker, begin, end). The caller must ensure fn writes only to per-item
// or per-worker state; the partition is a pure function of (n, threads),
// never of scheduling.
inline void parallel_for_ranges(size_t n, int threads,
                                const std::function<void(int, size_t, size_t)>& fn) {
  if (n == 0) return;
  threads = resolve_threads(threads, n);
  if (threads == 1) {
    fn(0, 0, n);
    return;
  }
  const size_t chunk = (n + threads - 1) / threads;
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(threads);
  for (int t = 1; t < threads; ++t) {
    const size_t lo = chunk * static_cast<size_t>(t);
    const size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    workers.emplace_back([&, lo, hi, t] {
      try {
        fn(t, lo, hi);
      } catch (...) {
        errors[t] = std::current_exception();
      }
    });
  }
  try {
    fn(0, 0, std::min(n, chunk));
  } catch (...) {
    errors[0] = std::current_exception();
  }
  for (auto& w : workers) w.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace gfn
