#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace sslprop {

/// Runs fn(i) for every i in [0, count) on up to `workers` threads. Work
/// items are claimed from a shared counter; callers write results into
/// per-index slots so output never depends on scheduling. If any call
/// throws, the exception of the lowest failing index is rethrown after all
/// threads join.
template <class Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  if (count == 0) return;
  workers = std::clamp<std::size_t>(workers, 1, count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    run();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace sslprop
