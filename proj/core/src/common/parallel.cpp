#include "mmalign/common/parallel.hpp"

#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace mmalign {

namespace {
std::atomic<int> g_max_threads{0};
}

void set_max_threads(int n) { g_max_threads.store(n < 0 ? 0 : n); }

int max_threads() {
  int n = g_max_threads.load();
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return n > 0 ? n : 1;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t workers =
      std::min<std::size_t>(static_cast<std::size_t>(max_threads()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }

  std::exception_ptr first_error;
  std::atomic<bool> failed{false};
  auto run_range = [&](std::size_t lo, std::size_t hi) {
    try {
      for (std::size_t i = lo; i < hi && !failed.load(std::memory_order_relaxed); ++i) fn(i);
    } catch (...) {
      bool expected = false;
      if (failed.compare_exchange_strong(expected, true)) first_error = std::current_exception();
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    if (lo >= n) break;
    pool.emplace_back(run_range, lo, std::min(n, lo + chunk));
  }
  run_range(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace mmalign
