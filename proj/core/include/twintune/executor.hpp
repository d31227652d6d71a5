#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "twintune/rollout.hpp"

namespace twintune {

// Stable kind codes: part of the job->seed hash, so reordering this enum
// would silently re-seed every recorded campaign. Do not renumber.
enum class JobKind : std::uint64_t {
  kSigma = 1,
  kSpsaPlus = 2,
  kSpsaMinus = 3,
  kSafety = 4,
  kTarget = 5,
  kPathDraw = 6,
  kSpsaDelta = 7,
};

// Deterministic per-job seed: splitmix-style mix of the identifying tuple.
// Depends only on the tuple, never on scheduling or worker count.
inline std::uint64_t job_seed(std::uint64_t campaign_seed, std::uint64_t k, std::uint64_t j,
                              JobKind kind) {
  return mix_seed(campaign_seed, k, j, static_cast<std::uint64_t>(kind));
}

struct RolloutJob {
  std::uint64_t job_id = 0;  // dispatch order key: position in the batch
  int iteration = 0;         // k
  int index = 0;             // j within the kind
  JobKind kind = JobKind::kSigma;
  ControllerParams theta = ControllerParams::Ones();
  PlantParams plant;
  const PathGeometry* path = nullptr;
  RolloutConfig cfg;  // cfg.seed already derived via job_seed
};

// Generic deterministic fan-out: evaluates fn(0..n-1) on `workers` threads
// (workers <= 0 resolves to hardware concurrency) and stores result i at
// slot i. Results depend only on fn, never on scheduling. fn must be safe to
// call concurrently for distinct i.
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

int resolve_workers(int requested);

// Executes a batch of rollout jobs. Results arrive in job order (slot i
// belongs to jobs[i]) and are bit-identical for any worker count. A job that
// throws yields a failed-record marker (completed = false, failed = true)
// instead of aborting the batch.
struct JobResult {
  PerformanceRecord record;
  bool failed = false;
  std::string error;
};

std::vector<JobResult> execute_batch(const std::vector<RolloutJob>& jobs, int workers);

}  // namespace twintune
