#pragma once

#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace qadpt {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is
/// handled exactly once, so results written to slot i do not depend on
/// scheduling. After all threads join, the exception of the lowest failing
/// index is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::exception_ptr error;
  std::size_t error_at = n;
  std::mutex lock;
  std::vector<std::thread> pool;
  const std::size_t w = workers < n ? workers : n;
  for (std::size_t t = 0; t < w; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += w) try {
          fn(i);
        } catch (...) {
          std::lock_guard<std::mutex> g(lock);
          if (i < error_at) {
            error_at = i;
            error = std::current_exception();
          }
          return;
        }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace qadpt
