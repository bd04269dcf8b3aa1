#include "evifuse/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "evifuse/error.hpp"

namespace evifuse {

int worker_count() {
  int requested = 0;
  if (const char* env = std::getenv("EVIFUSE_THREADS"); env && *env) {
    try {
      requested = std::stoi(env);
    } catch (const std::exception&) {
      fail(ErrorCode::Config, std::string("EVIFUSE_THREADS is not an integer: ") + env);
    }
    if (requested < 0) fail(ErrorCode::Config, "EVIFUSE_THREADS must be >= 0");
  }
  if (requested == 0) requested = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  return requested;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(worker_count()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace evifuse
