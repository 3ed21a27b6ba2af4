#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <type_traits>
#include <vector>

#include "aot/errors.hpp"

namespace aot {

// Bounded worker pool mapping fn over items; results come back in input
// order, so downstream writers stay deterministic regardless of the worker
// count. The first exception thrown by fn aborts the run and is rethrown
// after the pool drains.
template <typename T, typename Fn>
auto parallel_map(const std::vector<T>& items, int workers, Fn&& fn)
    -> std::vector<std::invoke_result_t<Fn&, const T&>> {
  using Result = std::invoke_result_t<Fn&, const T&>;
  if (workers < 1) throw ContractViolation("parallel_map: workers must be >= 1");
  std::vector<Result> results(items.size());
  if (items.empty()) return results;

  const int n_threads =
      std::min<int>(workers, static_cast<int>(items.size()));
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mu;

  auto worker = [&] {
    while (!failed.load(std::memory_order_relaxed)) {
      const std::size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      try {
        results[i] = fn(items[i]);
      } catch (...) {
        {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
        failed.store(true);
        return;
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(n_threads));
  for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return results;
}

}  // namespace aot
