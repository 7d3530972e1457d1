#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace mvs {

// Runs body(0..n-1) across up to `workers` threads. Work items are claimed
// from an atomic counter; callers own determinism by writing results into
// per-index slots and must not let exceptions escape the body.
inline void parallel_for(int n, int workers, const std::function<void(int)>& body) {
  if (n <= 0) return;
  if (workers > n) workers = n;
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) body(i);
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace mvs
