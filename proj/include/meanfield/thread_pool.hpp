#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace meanfield {

// Blocking parallel map over [0, n): spawns up to n_threads workers that
// pull indices from a shared atomic counter. Results must be written to
// disjoint slots by the caller (no synchronization is provided), which
// keeps outputs independent of the schedule.
inline void parallel_for(int64_t n, int n_threads,
                         const std::function<void(int64_t)>& fn) {
  if (n <= 0) return;
  if (n_threads <= 1 || n == 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  auto worker = [&] {
    for (;;) {
      int64_t i = next.fetch_add(1);
      if (i >= n) return;
      fn(i);
    }
  };
  int nt = static_cast<int>(std::min<int64_t>(n_threads, n));
  std::vector<std::thread> threads;
  threads.reserve(nt - 1);
  for (int t = 1; t < nt; ++t) threads.emplace_back(worker);
  worker();
  for (auto& th : threads) th.join();
}

}  // namespace meanfield
