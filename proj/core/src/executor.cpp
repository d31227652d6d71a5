#include "twintune/executor.hpp"

#include <atomic>
#include <stdexcept>
#include <thread>

namespace twintune {

int resolve_workers(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw ? static_cast<int>(hw) : 1;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int w = std::min(resolve_workers(workers), n);
  if (w <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  const auto body = [&]() {
    for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(w) - 1);
  for (int t = 1; t < w; ++t) pool.emplace_back(body);
  body();
  for (auto& th : pool) th.join();
}

std::vector<JobResult> execute_batch(const std::vector<RolloutJob>& jobs, int workers) {
  std::vector<JobResult> results(jobs.size());
  parallel_for(static_cast<int>(jobs.size()), workers, [&](int i) {
    const RolloutJob& job = jobs[static_cast<std::size_t>(i)];
    JobResult& out = results[static_cast<std::size_t>(i)];
    try {
      if (job.path == nullptr) throw std::invalid_argument("job has no path");
      out.record = run_oracle(job.theta, job.plant, *job.path, job.cfg);
    } catch (const std::exception& e) {
      out.failed = true;
      out.record.completed = false;
      out.error = e.what();
    } catch (...) {
      out.failed = true;
      out.record.completed = false;
      out.error = "unknown error";
    }
  });
  return results;
}

}  // namespace twintune
