#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <deque>
#include <vector>

#include "twintune/controller.hpp"
#include "twintune/path.hpp"
#include "twintune/plant.hpp"
#include "twintune/rng.hpp"

namespace twintune {

struct RolloutConfig {
  double window_seconds = 85.0;
  double dt = 0.05;
  std::uint64_t seed = 0;
  std::array<double, 2> input_noise_std{0.0, 0.0};              // on applied (delta_rate, throttle_rate)
  std::array<double, 5> output_noise_std{0.0, 0.0, 0.0, 0.0, 0.0};  // on measured (w, vx, vy, r, theta_dev)
  std::array<double, 2> initial_offset_std{0.0, 0.0};           // on initial (w, theta_dev)
  StateVec initial_state = StateVec::Zero();
  bool start_at_profile_speed = true;  // overrides initial vx with v_ref(0)
  bool record_trace = false;
  OcpConfig ocp;  // controller horizon configuration (carries the prediction model)

  int steps() const { return static_cast<int>(window_seconds / dt + 0.5); }
};

void validate_rollout(const RolloutConfig& cfg);

struct RolloutTrace {
  std::vector<double> t;
  std::vector<StateVec> state;
  std::vector<InputVec> command;  // controller output before noise/delay
  std::vector<double> cost;
};

// Fixed-window closed-loop evaluation record. The three series are the
// measured outputs at each control instant: lateral deviation, velocity
// tracking error, and the controller's reported optimal cost.
struct PerformanceRecord {
  Eigen::VectorXd y_path;      // measured w
  Eigen::VectorXd y_velocity;  // measured vx - v_ref(s)
  Eigen::VectorXd y_cost;      // J* per step
  bool completed = true;       // false when the episode diverged and was padded
  double h_path = 0.0;         // RMS of y_path
  double h_velocity = 0.0;
  double h_cost = 0.0;
  double kpi = 0.0;            // |V|^2 / (2 N_T) = 0.5 * (h_path^2 + h_velocity^2 + h_cost^2)
  RolloutTrace trace;          // filled only when cfg.record_trace
};

// Stacked performance vector V = [y_path; y_velocity; y_cost] (fixed order).
Eigen::VectorXd stack_performance(const PerformanceRecord& rec);

// RMS over a series: sqrt(mean of squares). Errors on empty input.
double rms(const Eigen::VectorXd& series);

// Recomputes (h_path, h_velocity, h_cost, kpi) from the series.
void finalize_metrics(PerformanceRecord& rec);

// Closed-loop oracle for an arbitrary policy object exposing
// reset() and solve(const StateVec&) -> PolicyResult. Per control step:
// measure (output noise on w, vx, vy, r, theta_dev), solve the policy,
// record the three outputs, apply input noise plus the plant's steering
// actuator delay, and advance the fused plant. Divergence (|w| beyond
// 10 * max(|w_l|, w_r), non-finite state, or singular geometry) stops the
// episode; remaining samples are padded with the last recorded values and
// completed is cleared.
template <typename Policy>
PerformanceRecord run_oracle_with(Policy& policy, const PlantParams& plant,
                                  const PathGeometry& path, const RolloutConfig& cfg);

// Standard oracle: builds the receding-horizon controller from theta and
// cfg.ocp, then delegates to run_oracle_with.
PerformanceRecord run_oracle(const ControllerParams& theta, const PlantParams& plant,
                             const PathGeometry& path, const RolloutConfig& cfg);

// --- implementation of the template ---

template <typename Policy>
PerformanceRecord run_oracle_with(Policy& policy, const PlantParams& plant,
                                  const PathGeometry& path, const RolloutConfig& cfg) {
  validate_rollout(cfg);
  validate_plant(plant);
  validate_path(path);

  const int n = cfg.steps();
  PerformanceRecord rec;
  rec.y_path.setZero(n);
  rec.y_velocity.setZero(n);
  rec.y_cost.setZero(n);

  NoiseStream rng(cfg.seed);
  StateVec x = cfg.initial_state;
  x[kLateral] += rng.normal(0.0, cfg.initial_offset_std[0]);
  x[kHeadingDev] += rng.normal(0.0, cfg.initial_offset_std[1]);
  if (cfg.start_at_profile_speed) x[kVx] = eval_path(path, x[kStation]).v_ref;

  policy.reset();

  // Steering-rate command FIFO (delay acts on the steering channel only).
  std::deque<double> steer_fifo(static_cast<std::size_t>(plant.actuator_delay_steps), 0.0);

  const double diverge_w = 10.0 * std::max(std::abs(path.lane_left), path.lane_right);
  InputVec last_cmd = InputVec::Zero();
  double last_cost = 0.0;
  int recorded = 0;

  for (int i = 0; i < n; ++i) {
    StateVec meas = x;
    meas[kLateral] += rng.normal(0.0, cfg.output_noise_std[0]);
    meas[kVx] += rng.normal(0.0, cfg.output_noise_std[1]);
    meas[kVy] += rng.normal(0.0, cfg.output_noise_std[2]);
    meas[kYawRate] += rng.normal(0.0, cfg.output_noise_std[3]);
    meas[kHeadingDev] += rng.normal(0.0, cfg.output_noise_std[4]);

    const PolicyResult sol = policy.solve(meas);
    if (sol.status == SolveStatus::kOk) {
      last_cmd = sol.u0;
      last_cost = sol.cost;
    }
    rec.y_path[i] = meas[kLateral];
    rec.y_velocity[i] = meas[kVx] - eval_path(path, meas[kStation]).v_ref;
    rec.y_cost[i] = last_cost;
    recorded = i + 1;

    if (cfg.record_trace) {
      rec.trace.t.push_back(i * cfg.dt);
      rec.trace.state.push_back(x);
      rec.trace.command.push_back(last_cmd);
      rec.trace.cost.push_back(last_cost);
    }

    InputVec applied = last_cmd;
    applied[kSteerRate] += rng.normal(0.0, cfg.input_noise_std[0]);
    applied[kThrottleRate] += rng.normal(0.0, cfg.input_noise_std[1]);
    if (!steer_fifo.empty()) {
      steer_fifo.push_back(applied[kSteerRate]);
      applied[kSteerRate] = steer_fifo.front();
      steer_fifo.pop_front();
    }

    bool diverged = false;
    try {
      x = step_fused(x, applied, plant, path, cfg.dt);
    } catch (const std::domain_error&) {
      diverged = true;  // singular geometry counts as divergence, not an error
    }
    if (!diverged && (!x.allFinite() || std::abs(x[kLateral]) > diverge_w)) diverged = true;
    if (diverged) {
      rec.completed = false;
      break;
    }
  }

  // Pad an aborted episode with its last recorded samples.
  if (!rec.completed && recorded > 0) {
    for (int i = recorded; i < n; ++i) {
      rec.y_path[i] = rec.y_path[recorded - 1];
      rec.y_velocity[i] = rec.y_velocity[recorded - 1];
      rec.y_cost[i] = rec.y_cost[recorded - 1];
    }
  }

  finalize_metrics(rec);
  return rec;
}

}  // namespace twintune
