#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace ddn::detail {

/// Calls fn(k) for k in [0, count). With `parallel` set, batch elements are
/// spread over hardware threads; each element is still processed
/// sequentially, so results do not depend on the schedule. Workspace
/// accounting only sees allocations made on the calling thread.
template <class F>
void for_each_batch(std::size_t count, bool parallel, F&& fn) {
  const std::size_t workers =
      parallel ? std::min<std::size_t>(count, std::max(1u, std::thread::hardware_concurrency())) : 1;
  if (workers <= 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < count; k += workers) fn(k);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ddn::detail
