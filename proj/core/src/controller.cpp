#include "twintune/controller.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace twintune {

namespace {

// Error dims in stage order: (vx - v_ref, vy, r, w, theta_dev, delta, throttle).
constexpr int kErrDims[7] = {kVx, kVy, kYawRate, kLateral, kHeadingDev, kSteer, kThrottle};

constexpr double kFdStep = 1e-5;  // central FD step on normalized variables

bool finite_state(const StateVec& x) {
  for (int d = 0; d < kStateDim; ++d) {
    if (!std::isfinite(x[d]) || std::abs(x[d]) > 1e6) return false;
  }
  return true;
}

}  // namespace

Weights assemble_weights(const ControllerParams& theta) {
  for (int i = 0; i < kThetaDim; ++i) {
    if (!std::isfinite(theta[i])) throw std::invalid_argument("weights: non-finite entry");
  }
  Weights w;
  w.q = theta.head<7>();
  w.r = theta.tail<2>();
  if ((w.q.array() < 0.0).any()) throw std::invalid_argument("weights: q must be >= 0");
  if ((w.r.array() <= 0.0).any()) throw std::invalid_argument("weights: r must be > 0");
  return w;
}

void validate_ocp(const OcpConfig& cfg) {
  const auto fail = [](const char* what) { throw std::invalid_argument(std::string("ocp: ") + what); };
  if (cfg.horizon_steps < 1) fail("horizon_steps must be >= 1");
  if (!(cfg.horizon_seconds > 0.0)) fail("horizon_seconds must be > 0");
  if (cfg.sqp_iters < 1) fail("sqp_iters must be >= 1");
  for (int c = 0; c < kInputDim; ++c)
    if (!(cfg.input_min[c] < cfg.input_max[c])) fail("input box must have min < max");
  for (int d = 0; d < kStateDim; ++d)
    if (!(cfg.state_min[d] < cfg.state_max[d])) fail("state box must have min < max");
  validate_plant(cfg.model);
}

NmpcController::NmpcController(const ControllerParams& theta, const OcpConfig& cfg,
                               const PathGeometry& path)
    : cfg_(cfg), path_(&path), w_(assemble_weights(theta)), n_(cfg.horizon_steps),
      nu_(2 * cfg.horizon_steps), dt_(cfg.dt()) {
  validate_ocp(cfg_);
  u_.setZero(2, n_);
  u_cand_.setZero(2, n_);
  states_.setZero(kStateDim, n_ + 1);
  states_tmp_.setZero(kStateDim, n_ + 1);
  sens_.setZero(kStateDim, nu_);
  sens_next_.setZero(kStateDim, nu_);
  hess_.setZero(nu_, nu_);
  grad_.setZero(nu_);
  step_.setZero(nu_);
}

void NmpcController::reset() {
  have_warm_ = false;
  held_action_.setZero();
  held_cost_ = 0.0;
  u_.setZero();
}

void NmpcController::clamp_inputs(Eigen::MatrixXd& U) const {
  for (int i = 0; i < n_; ++i) {
    for (int c = 0; c < kInputDim; ++c)
      U(c, i) = std::clamp(U(c, i), cfg_.input_min[c], cfg_.input_max[c]);
  }
}

bool NmpcController::rollout_horizon(const Eigen::MatrixXd& U, double& cost, double& merit) {
  cost = 0.0;
  double penalty = 0.0;
  StateVec x = states_tmp_.col(0);
  for (int i = 0; i < n_; ++i) {
    const InputVec ui = U.col(i);
    try {
      x = step_fused(x, ui, cfg_.model, *path_, dt_);
    } catch (const std::domain_error&) {
      return false;
    }
    if (!finite_state(x)) return false;
    states_tmp_.col(i + 1) = x;

    const PathSample ref = eval_path(*path_, x[kStation]);
    double stage = 0.0;
    for (int e = 0; e < 7; ++e) {
      const int d = kErrDims[e];
      const double err = (d == kVx) ? x[kVx] - ref.v_ref : x[d];
      stage += w_.q[e] * err * err;
    }
    stage += w_.r[0] * ui[0] * ui[0] + w_.r[1] * ui[1] * ui[1];
    cost += dt_ * stage;

    for (int d = 0; d < kStateDim; ++d) {
      const double over = x[d] - cfg_.state_max[d];
      const double under = cfg_.state_min[d] - x[d];
      if (over > 0.0) penalty += dt_ * kStateBoxPenalty * over * over;
      if (under > 0.0) penalty += dt_ * kStateBoxPenalty * under * under;
    }
  }
  merit = cost + penalty;
  return std::isfinite(merit);
}

PolicyResult NmpcController::solve(const StateVec& x0) {
  PolicyResult res;

  if (cfg_.warm_start && have_warm_) {
    // Receding-horizon shift: reuse last plan advanced by one stage.
    for (int i = 0; i + 1 < n_; ++i) u_.col(i) = u_.col(i + 1);
  } else {
    u_.setZero();
  }
  clamp_inputs(u_);

  const auto fail_hold = [&]() {
    res.u0 = held_action_;
    res.cost = held_cost_;
    res.status = SolveStatus::kFailed;
    return res;
  };

  states_tmp_.col(0) = x0;
  double cost, merit;
  if (!rollout_horizon(u_, cost, merit)) {
    // The shifted plan diverges from this state; a zero plan is the last
    // resort before giving up.
    u_.setZero();
    clamp_inputs(u_);
    if (!rollout_horizon(u_, cost, merit)) return fail_hold();
  }
  states_ = states_tmp_;
  res.merit_history.push_back(merit);

  Eigen::Matrix<double, kStateDim, kStateDim> A;
  Eigen::Matrix<double, kStateDim, kInputDim> B;

  for (int it = 0; it < cfg_.sqp_iters; ++it) {
    hess_.setZero();
    grad_.setZero();
    sens_.setZero();

    bool jacobian_ok = true;
    for (int i = 0; i < n_ && jacobian_ok; ++i) {
      const StateVec xi = states_.col(i);
      const InputVec ui = u_.col(i);
      try {
        for (int d = 0; d < kStateDim; ++d) {
          const double h = kFdStep * (1.0 + std::abs(xi[d]));
          StateVec xp = xi, xm = xi;
          xp[d] += h;
          xm[d] -= h;
          A.col(d) = (step_fused(xp, ui, cfg_.model, *path_, dt_) -
                      step_fused(xm, ui, cfg_.model, *path_, dt_)) /
                     (2.0 * h);
        }
        for (int c = 0; c < kInputDim; ++c) {
          const double h = kFdStep * (1.0 + std::abs(ui[c]));
          InputVec up = ui, um = ui;
          up[c] += h;
          um[c] -= h;
          B.col(c) = (step_fused(xi, up, cfg_.model, *path_, dt_) -
                      step_fused(xi, um, cfg_.model, *path_, dt_)) /
                     (2.0 * h);
        }
      } catch (const std::domain_error&) {
        jacobian_ok = false;
        break;
      }

      // d x_{i+1} / dU: propagate the prefix touched by u_0..u_{i-1}, then
      // append this stage's input block.
      const int active = 2 * i;
      if (active > 0)
        sens_next_.leftCols(active).noalias() = A * sens_.leftCols(active);
      sens_next_.block<kStateDim, kInputDim>(0, active) = B;
      sens_.leftCols(active + 2) = sens_next_.leftCols(active + 2);

      // Per-dim quadratic weight and residual gradient at stage i+1.
      const StateVec xn = states_.col(i + 1);
      const PathSample ref = eval_path(*path_, xn[kStation]);
      StateVec wv = StateVec::Zero(), rv = StateVec::Zero();
      for (int e = 0; e < 7; ++e) {
        const int d = kErrDims[e];
        const double err = (d == kVx) ? xn[kVx] - ref.v_ref : xn[d];
        wv[d] += dt_ * w_.q[e];
        rv[d] += dt_ * w_.q[e] * err;
      }
      for (int d = 0; d < kStateDim; ++d) {
        const double over = xn[d] - cfg_.state_max[d];
        const double under = cfg_.state_min[d] - xn[d];
        if (over > 0.0) {
          wv[d] += dt_ * kStateBoxPenalty;
          rv[d] += dt_ * kStateBoxPenalty * over;
        } else if (under > 0.0) {
          wv[d] += dt_ * kStateBoxPenalty;
          rv[d] += dt_ * kStateBoxPenalty * (-under);
        }
      }

      const int m = active + 2;
      const auto S = sens_.leftCols(m);
      hess_.topLeftCorner(m, m).noalias() += S.transpose() * wv.asDiagonal() * S;
      grad_.head(m).noalias() += S.transpose() * rv;

      // Input quadratic terms are block-diagonal.
      for (int c = 0; c < kInputDim; ++c) {
        hess_(active + c, active + c) += dt_ * w_.r[c];
        grad_(active + c) += dt_ * w_.r[c] * ui[c];
      }
    }
    if (!jacobian_ok) {
      res.merit_history.push_back(merit);
      continue;  // keep the current feasible plan; the budget is fixed
    }

    // Scale-equivariant ridge keeps the factorization safe without breaking
    // the exact cost-scaling invariance of the Gauss-Newton direction.
    const double ridge = 1e-9 * (hess_.trace() / nu_ + 1e-300);
    for (int j = 0; j < nu_; ++j) hess_(j, j) += ridge;
    ldlt_.compute(hess_);
    step_ = ldlt_.solve(-grad_);
    if (!step_.allFinite()) {
      res.merit_history.push_back(merit);
      continue;
    }

    double alpha = 1.0;
    bool accepted = false;
    for (int ls = 0; ls < 6; ++ls, alpha *= 0.5) {
      u_cand_ = u_;
      for (int i = 0; i < n_; ++i)
        u_cand_.col(i) += alpha * step_.segment<kInputDim>(2 * i);
      clamp_inputs(u_cand_);
      double cost_c, merit_c;
      states_tmp_.col(0) = x0;
      if (!rollout_horizon(u_cand_, cost_c, merit_c)) continue;
      if (merit_c < merit) {
        u_ = u_cand_;
        states_ = states_tmp_;
        cost = cost_c;
        merit = merit_c;
        accepted = true;
        break;
      }
    }
    (void)accepted;  // non-improving budgets simply keep the incumbent plan
    res.merit_history.push_back(merit);
  }

  res.u0 = u_.col(0);
  res.cost = cost;
  res.status = SolveStatus::kOk;
  have_warm_ = true;
  held_action_ = res.u0;
  held_cost_ = cost;
  return res;
}

PidController::PidController(const PidGains& gains, const InputVec& u_min, const InputVec& u_max,
                             const PathGeometry& path, double dt)
    : g_(gains), u_min_(u_min), u_max_(u_max), path_(&path), dt_(dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("pid: dt must be > 0");
}

void PidController::reset() {
  int_lat_ = int_lon_ = prev_lat_ = prev_lon_ = 0.0;
  primed_ = false;
}

PolicyResult PidController::solve(const StateVec& x) {
  const PathSample ref = eval_path(*path_, x[kStation]);
  const double e_lat = x[kLateral];          // positive w steers negative
  const double e_lon = x[kVx] - ref.v_ref;

  const double d_lat = primed_ ? (e_lat - prev_lat_) / dt_ : 0.0;
  const double d_lon = primed_ ? (e_lon - prev_lon_) / dt_ : 0.0;
  int_lat_ += e_lat * dt_;
  int_lon_ += e_lon * dt_;
  prev_lat_ = e_lat;
  prev_lon_ = e_lon;
  primed_ = true;

  PolicyResult res;
  res.u0[kSteerRate] = -(g_.kp_lat * e_lat + g_.ki_lat * int_lat_ + g_.kd_lat * d_lat);
  res.u0[kThrottleRate] = -(g_.kp_lon * e_lon + g_.ki_lon * int_lon_ + g_.kd_lon * d_lon);
  for (int c = 0; c < kInputDim; ++c) res.u0[c] = std::clamp(res.u0[c], u_min_[c], u_max_[c]);
  res.cost = 0.0;
  res.status = SolveStatus::kOk;
  return res;
}

}  // namespace twintune
