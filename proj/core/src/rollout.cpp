#include "twintune/rollout.hpp"

#include <cmath>
#include <stdexcept>

namespace twintune {

void validate_rollout(const RolloutConfig& cfg) {
  const auto fail = [](const char* what) { throw std::invalid_argument(std::string("rollout: ") + what); };
  if (!(cfg.dt > 0.0)) fail("dt must be > 0");
  if (!(cfg.window_seconds >= cfg.dt)) fail("window must cover at least one step");
  for (double s : cfg.input_noise_std)
    if (s < 0.0) fail("input_noise_std must be >= 0");
  for (double s : cfg.output_noise_std)
    if (s < 0.0) fail("output_noise_std must be >= 0");
  for (double s : cfg.initial_offset_std)
    if (s < 0.0) fail("initial_offset_std must be >= 0");
}

Eigen::VectorXd stack_performance(const PerformanceRecord& rec) {
  const Eigen::Index n = rec.y_path.size();
  Eigen::VectorXd v(3 * n);
  v.segment(0, n) = rec.y_path;
  v.segment(n, n) = rec.y_velocity;
  v.segment(2 * n, n) = rec.y_cost;
  return v;
}

double rms(const Eigen::VectorXd& series) {
  if (series.size() == 0) throw std::invalid_argument("rms: empty series");
  return std::sqrt(series.squaredNorm() / static_cast<double>(series.size()));
}

void finalize_metrics(PerformanceRecord& rec) {
  rec.h_path = rms(rec.y_path);
  rec.h_velocity = rms(rec.y_velocity);
  rec.h_cost = rms(rec.y_cost);
  rec.kpi = 0.5 * (rec.h_path * rec.h_path + rec.h_velocity * rec.h_velocity +
                   rec.h_cost * rec.h_cost);
}

PerformanceRecord run_oracle(const ControllerParams& theta, const PlantParams& plant,
                             const PathGeometry& path, const RolloutConfig& cfg) {
  NmpcController controller(theta, cfg.ocp, path);
  return run_oracle_with(controller, plant, path, cfg);
}

}  // namespace twintune
