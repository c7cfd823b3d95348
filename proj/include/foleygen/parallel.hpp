#pragma once

#include <algorithm>
#include <thread>
#include <vector>

namespace foleygen {

// Runs fn(i) for i in [begin, end) on up to `threads` workers; index i is
// always handled by worker (i - begin) % workers.
template <typename Fn>
void parallel_for(int begin, int end, int threads, Fn&& fn) {
  const int n = end - begin;
  if (threads <= 1 || n <= 1) {
    for (int i = begin; i < end; ++i) {
      fn(i);
    }
    return;
  }
  std::vector<std::thread> pool;
  const int workers = std::min(threads, n);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = begin + w; i < end; i += workers) {
        fn(i);
      }
    });
  }
  for (auto& t : pool) {
    t.join();
  }
}

}  // namespace foleygen
