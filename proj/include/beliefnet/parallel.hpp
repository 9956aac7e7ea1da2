#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace beliefnet {

// Worker cap: BELIEFNET_THREADS when set, else the logical core count.
inline int worker_threads() {
  if (const char* env = std::getenv("BELIEFNET_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n) across up to worker_threads() threads. Each
// index is processed exactly once; callers own any cross-index reduction and
// should reduce in index order to stay deterministic.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  int workers = std::min(n, worker_threads());
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace beliefnet
