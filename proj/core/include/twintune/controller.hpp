#pragma once

#include <Eigen/Core>
#include <Eigen/Cholesky>
#include <vector>

#include "twintune/path.hpp"
#include "twintune/plant.hpp"

namespace twintune {

// Tunable parameter vector theta = [q_vx, q_vy, q_r, q_w, q_theta, q_steer,
// q_throttle, r_steer_rate, r_throttle_rate]: 7 state weights on the tracking
// error Dx = (vx - v_ref, vy, r, w, theta_dev, delta, throttle) plus 2 input
// weights on the rates. Station s carries no weight.
using ControllerParams = Eigen::Matrix<double, 9, 1>;

enum ThetaIndex : int {
  kQvx = 0, kQvy, kQr, kQw, kQtheta, kQsteer, kQthrottle, kRsteerRate, kRthrottleRate
};

inline constexpr int kThetaDim = 9;

struct Weights {
  Eigen::Matrix<double, 7, 1> q;
  Eigen::Matrix<double, 2, 1> r;
};

// Splits theta into (q, r). Throws std::invalid_argument if any entry is
// non-finite, q < 0, or r <= 0.
Weights assemble_weights(const ControllerParams& theta);

struct OcpConfig {
  int horizon_steps = 30;
  double horizon_seconds = 3.0;
  int sqp_iters = 2;
  InputVec input_min = InputVec::Constant(-1.0);
  InputVec input_max = InputVec::Constant(1.0);
  StateVec state_min = StateVec::Constant(-1e18);  // use +/-1e18 for unbounded dims
  StateVec state_max = StateVec::Constant(1e18);
  bool warm_start = true;
  PlantParams model;  // the controller's internal prediction model

  double dt() const { return horizon_seconds / horizon_steps; }
};

void validate_ocp(const OcpConfig& cfg);

enum class SolveStatus { kOk, kFailed };

struct PolicyResult {
  InputVec u0 = InputVec::Zero();
  double cost = 0.0;  // stage cost of the returned trajectory (box penalty excluded)
  SolveStatus status = SolveStatus::kOk;
  std::vector<double> merit_history;  // merit after init and after each inner iteration
};

// State-box violations are softened with a fixed quadratic penalty; the
// weight is deliberately not tunable.
inline constexpr double kStateBoxPenalty = 1e3;

// Receding-horizon tracking controller: direct single shooting over the fused
// model, projected Gauss-Newton with a fixed inner-iteration budget and
// central finite-difference sensitivities (step 1e-5 on normalized
// variables). Inputs are kept feasible by projection at every candidate, so
// the returned first action always lies in the input box. On solver failure
// (no finite candidate) the previous action is held and status reports
// kFailed. One instance per rollout: the warm start is confined to it.
class NmpcController {
 public:
  NmpcController(const ControllerParams& theta, const OcpConfig& cfg, const PathGeometry& path);

  void reset();  // drops the warm start and the held action
  PolicyResult solve(const StateVec& x0);

  const OcpConfig& config() const { return cfg_; }

 private:
  // Simulates the horizon under inputs U; fills states_ and returns
  // {stage_cost, merit} (merit = stage cost + box penalty), or false when the
  // prediction diverges (non-finite or singular geometry).
  bool rollout_horizon(const Eigen::MatrixXd& U, double& cost, double& merit);
  void clamp_inputs(Eigen::MatrixXd& U) const;

  OcpConfig cfg_;
  const PathGeometry* path_;
  Weights w_;
  int n_;        // horizon steps
  int nu_;       // 2 * n_
  double dt_;

  Eigen::MatrixXd u_;         // 2 x n_ current input plan
  Eigen::MatrixXd u_cand_;    // line-search candidate
  Eigen::MatrixXd states_;    // 8 x (n_+1) shooting states for u_
  Eigen::MatrixXd states_tmp_;
  Eigen::MatrixXd sens_;      // 8 x nu_ running sensitivity d x_{i+1} / d U
  Eigen::MatrixXd sens_next_;
  Eigen::MatrixXd hess_;      // nu_ x nu_ Gauss-Newton normal matrix
  Eigen::VectorXd grad_;      // nu_
  Eigen::VectorXd step_;      // nu_
  Eigen::LDLT<Eigen::MatrixXd> ldlt_;

  bool have_warm_ = false;
  InputVec held_action_ = InputVec::Zero();
  double held_cost_ = 0.0;
};

// Six-gain PID fallback policy (lateral PID on w -> steer rate, longitudinal
// PID on vx - v_ref -> throttle rate). Exists to demonstrate that the rollout
// and tuning layers are controller-agnostic.
struct PidGains {
  double kp_lat = 0.0, ki_lat = 0.0, kd_lat = 0.0;
  double kp_lon = 0.0, ki_lon = 0.0, kd_lon = 0.0;
};

class PidController {
 public:
  PidController(const PidGains& gains, const InputVec& u_min, const InputVec& u_max,
                const PathGeometry& path, double dt);

  void reset();
  PolicyResult solve(const StateVec& x);

 private:
  PidGains g_;
  InputVec u_min_, u_max_;
  const PathGeometry* path_;
  double dt_;
  double int_lat_ = 0.0, int_lon_ = 0.0;
  double prev_lat_ = 0.0, prev_lon_ = 0.0;
  bool primed_ = false;
};

}  // namespace twintune
