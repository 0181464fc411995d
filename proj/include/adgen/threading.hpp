#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <thread>
#include <vector>

namespace adgen {

// Worker count for parallel_for. Controlled by ADGEN_THREADS; defaults to the
// hardware concurrency. Recorded into run directories by the harness.
inline int thread_count() {
  static const int n = [] {
    if (const char* env = std::getenv("ADGEN_THREADS")) {
      const long v = std::strtol(env, nullptr, 10);
      if (v >= 1) return static_cast<int>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
  }();
  return n;
}

// Splits [0, n) into contiguous chunks, one per worker. Each call site owns
// disjoint output rows, and every per-element reduction inside the body runs
// in a fixed order, so the result does not depend on the split.
template <typename Fn>
void parallel_for(std::int64_t n, Fn&& body) {
  const int workers = std::min<std::int64_t>(thread_count(), n);
  if (workers <= 1) {
    if (n > 0) body(std::int64_t{0}, n);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<size_t>(workers));
  const std::int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const std::int64_t begin = w * chunk;
    const std::int64_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    threads.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& t : threads) t.join();
}

}  // namespace adgen
