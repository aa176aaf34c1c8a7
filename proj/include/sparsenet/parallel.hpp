#pragma once

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace sparsenet {

namespace detail {
inline std::size_t& worker_slot() {
  static std::size_t workers = 1;
  return workers;
}
}  // namespace detail

// Number of threads ops may use for independent output elements.
// Results never depend on this value.
inline std::size_t worker_count() { return detail::worker_slot(); }
inline void set_worker_count(std::size_t workers) { detail::worker_slot() = std::max<std::size_t>(1, workers); }

// Runs fn(i) for i in [0, count). Each index is handled by exactly one
// worker, so any reduction inside fn keeps a fixed order.
template <typename Fn>
void parallel_for(std::size_t count, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (count + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(count, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace sparsenet
