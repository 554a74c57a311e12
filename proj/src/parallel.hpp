#pragma once

// Deterministic parallel loop: work items write to preallocated slots, so the
// result does not depend on thread scheduling.

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace sk {

inline void parallel_for(size_t n, const std::function<void(size_t)>& body) {
  unsigned hw = std::thread::hardware_concurrency();
  size_t workers = std::min<size_t>(n, hw == 0 ? 4 : hw);
  if (workers <= 1) {
    for (size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace sk
