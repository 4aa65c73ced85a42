#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace uflow {

// Runs f(i) for i in [0, n) on up to `jobs` threads. Work items must be
// independent; results are written by index so the outcome does not depend
// on scheduling. The exception of the lowest failing index is rethrown.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& f) {
  const std::size_t workers = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        f(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Hardware concurrency, at least 1.
inline int default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace uflow
