#pragma once

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

#include "sf/numerics.hpp"

namespace sf {

/// Runs f(i) for i in [0, n) on up to `workers` threads, contiguous chunks
/// per thread. The first exception thrown by any task is rethrown.
template <class F>
void parallel_for(Index n, Index workers, F&& f) {
  workers = std::clamp<Index>(workers, 1, std::max<Index>(n, 1));
  if (workers == 1) {
    for (Index i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  std::vector<std::thread> threads;
  const Index chunk = (n + workers - 1) / workers;
  for (Index w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      try {
        for (Index i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) f(i);
      } catch (...) {
        errors[std::size_t(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

} // namespace sf
