#pragma once

#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace doscond {

/// Runs tasks[0..n) on up to `jobs` threads. Tasks must write only to their
/// own output slots; completion order is irrelevant to results, so jobs=1 and
/// jobs=N produce identical outputs. The first thrown exception is rethrown
/// on the calling thread after all workers join.
inline void run_tasks(const std::vector<std::function<void()>>& tasks, int jobs) {
  if (jobs <= 1 || tasks.size() <= 1) {
    for (const auto& t : tasks) t();
    return;
  }
  std::atomic<size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&] {
    for (;;) {
      size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        tasks[i]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  size_t n_threads = std::min<size_t>(static_cast<size_t>(jobs), tasks.size());
  std::vector<std::thread> threads;
  threads.reserve(n_threads);
  for (size_t i = 0; i < n_threads; ++i) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace doscond
