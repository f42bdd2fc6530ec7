#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mrcn {

namespace detail {
inline std::atomic<int>& thread_setting() {
  static std::atomic<int> threads{1};
  return threads;
}
}  // namespace detail

// Worker count used by batch-parallel kernels. 1 means fully sequential and
// bit-reproducible.
inline int num_threads() { return detail::thread_setting().load(); }
inline void set_num_threads(int k) { detail::thread_setting().store(std::max(1, k)); }

// Runs fn(begin, end, worker) over a static partition of [0, n). The
// partition depends only on n and the worker count, so per-worker partial
// results can be merged in worker order deterministically.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, int workers = num_threads()) {
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
  if (k <= 1) {
    if (n > 0) fn(std::size_t{0}, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(k);
  pool.reserve(k - 1);
  auto run = [&](std::size_t t) {
    const std::size_t begin = n * t / k;
    const std::size_t end = n * (t + 1) / k;
    try {
      fn(begin, end, static_cast<int>(t));
    } catch (...) {
      errors[t] = std::current_exception();
    }
  };
  for (std::size_t t = 1; t < k; ++t) pool.emplace_back(run, t);
  run(0);
  for (auto& th : pool) th.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// Number of workers parallel_for will actually use for n items.
inline int workers_for(std::size_t n) {
  return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(num_threads()),
                                                std::max<std::size_t>(n, 1)));
}

}  // namespace mrcn
