#include <benchmark/benchmark.h>

#include <cmath>

#include "twintune/campaign.hpp"
#include "twintune/controller.hpp"
#include "twintune/path.hpp"
#include "twintune/plant.hpp"
#include "twintune/rollout.hpp"

namespace {

using namespace twintune;

const PathGeometry& bench_path() {
  static const std::vector<PathGeometry> lib = bundled_paths();
  return lib.front();
}

StateVec cruise_state() {
  StateVec x = StateVec::Zero();
  x[kVx] = 3.0;
  x[kStation] = 40.0;
  x[kLateral] = 0.1;
  return x;
}

void BM_PlantStepFused(benchmark::State& state) {
  const PlantParams p;
  const PathGeometry& path = bench_path();
  StateVec x = cruise_state();
  const InputVec u(0.05, 0.1);
  for (auto _ : state) {
    x = step_fused(x, u, p, path, 0.05);
    if (x[kStation] > path.length() - 20.0 || std::abs(x[kLateral]) > 1.0) {
      x = cruise_state();
    }
    benchmark::DoNotOptimize(x);
  }
}
BENCHMARK(BM_PlantStepFused);

void BM_OcpSolve(benchmark::State& state) {
  const CampaignConfig cfg = bundled_sim2sim_config();
  OcpConfig ocp = cfg.vehicle.rollout.ocp;
  ocp.model = cfg.vehicle.nominal;
  NmpcController ctrl(ControllerParams::Ones(), ocp, bench_path());
  const StateVec x = cruise_state();
  for (auto _ : state) {
    PolicyResult r = ctrl.solve(x);
    benchmark::DoNotOptimize(r.u0);
  }
}
BENCHMARK(BM_OcpSolve);

void BM_RolloutShortWindow(benchmark::State& state) {
  const CampaignConfig cfg = bundled_sim2sim_config();
  RolloutConfig rc = cfg.vehicle.rollout;
  rc.window_seconds = 5.0;
  rc.seed = 7;
  rc.ocp.model = cfg.vehicle.nominal;
  for (auto _ : state) {
    PerformanceRecord rec =
        run_oracle(ControllerParams::Ones(), cfg.vehicle.nominal, bench_path(), rc);
    benchmark::DoNotOptimize(rec.kpi);
  }
}
BENCHMARK(BM_RolloutShortWindow);

}  // namespace

BENCHMARK_MAIN();
