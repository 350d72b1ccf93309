#include "takeup/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace takeup {

int thread_count() {
  if (const char* env = std::getenv("TAKEUP_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t n_chunks = (n + parallel_chunk - 1) / parallel_chunk;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n_chunks);

  auto run_chunk = [&](std::size_t c) {
    fn(c * parallel_chunk, std::min(n, (c + 1) * parallel_chunk));
  };

  if (workers <= 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
    return;
  }

  std::atomic<std::size_t> next{0};
  auto drain = [&] {
    for (;;) {
      const std::size_t c = next.fetch_add(1);
      if (c >= n_chunks) return;
      run_chunk(c);
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(drain);
  drain();
  for (auto& t : pool) t.join();
}

double parallel_sum(std::size_t n, const std::function<double(std::size_t)>& fn) {
  if (n == 0) return 0.0;
  const std::size_t n_chunks = (n + parallel_chunk - 1) / parallel_chunk;
  std::vector<double> partial(n_chunks, 0.0);
  parallel_for(n, [&](std::size_t lo, std::size_t hi) {
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += fn(i);
    partial[lo / parallel_chunk] = s;
  });
  double total = 0.0;
  for (double s : partial) total += s;
  return total;
}

}  // namespace takeup
