#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <vector>

#include "twintune/executor.hpp"

namespace twintune {

// Update-law variants. Auks: fused update with covariance adaptation.
// ConstantCovariance: fused update, covariances frozen at their initial
// values. UkfOnly: Kalman update alone (adaptation on). SpsaOnly: gradient
// update alone; the parameter covariance is frozen so probe scales stay at
// their initial shape.
enum class TunerMode { kAuks, kConstantCovariance, kUkfOnly, kSpsaOnly };

struct TunerHyperparams {
  int n_theta = 9;
  double ut_lambda = -6.0;     // scaling lambda; n_theta + lambda must be > 0
  double fusion_w = 0.5;       // weight on the Kalman increment in the fused update
  double alpha = 0.95;         // covariance forgetting factor, in [0, 1)
  double a0 = 1.0;             // initial SPSA gain
  double gain_power = 0.602;   // exponent on k in the gain schedule
  double safety_margin = 0.2;  // R: candidate accepted if cost <= (1+R) * incumbent
  Eigen::VectorXd theta_min, theta_max;  // admissible box, theta_min > 0 elementwise
  TunerMode mode = TunerMode::kAuks;
  std::optional<bool> adapt_override;  // pins covariance adaptation regardless of mode

  // Spread of the unscented transform.
  double ut_offset() const { return n_theta + ut_lambda; }
  double c0() const;
  double weight_center() const { return ut_lambda / ut_offset(); }
  double weight_leaf() const { return 1.0 / (2.0 * ut_offset()); }

  bool adapt_enabled() const;
  double effective_fusion_w() const;

  static TunerHyperparams defaults_for(int n_theta);
};

void validate_hyperparams(const TunerHyperparams& hp);

struct ParameterBelief {
  Eigen::VectorXd theta;
  Eigen::MatrixXd P;         // parameter covariance P_{k|k}
  Eigen::MatrixXd C_dtheta;  // process-noise covariance
  Eigen::MatrixXd C_v;       // output-noise covariance (reduced-output space)
  int k = 1;                 // iteration counter, starts at 1
  double a_k = 1.0;          // step size used by the last update (informational)
};

ParameterBelief make_belief(const Eigen::VectorXd& theta0, const Eigen::MatrixXd& P0,
                            const Eigen::MatrixXd& C_dtheta0, const Eigen::MatrixXd& C_v0,
                            const TunerHyperparams& hp);

// Symmetrize and clip negative eigenvalues to zero.
Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m);

struct SigmaSet {
  Eigen::MatrixXd points;     // n x (2n+1); column 0 is theta_k
  double c_k = 0.0;           // realized spread scale (bound-shrunk, never clipped)
  Eigen::MatrixXd chol;       // lower Cholesky factor of P used for the spread
  Eigen::VectorXd spsa_delta; // Rademacher +/-1 directions
  Eigen::VectorXd spsa_p;     // realized probe perturbation c_spsa * chol * delta
  Eigen::VectorXd theta_plus, theta_minus;
  double c_spsa = 0.0;
};

// Sigma points theta_k +/- c_k * A^j with A = chol(P + jitter). c_k is the
// largest scale <= c0 keeping every column inside [theta_min, theta_max]
// (closed form per column, never elementwise clipping). The SPSA pair starts
// from the same shrunken scale and shrinks further along chol*delta if its
// probes would still exit the box. Throws std::domain_error if theta_k is
// outside the box and std::runtime_error if P cannot be factored.
SigmaSet generate_sigma_points(const ParameterBelief& belief, const TunerHyperparams& hp,
                               std::uint64_t delta_seed);

struct UnscentedMoments {
  Eigen::VectorXd theta_bar;  // weighted sigma mean (= theta_k up to rounding)
  Eigen::MatrixXd P_pred;     // C_dtheta + weighted sigma covariance, PSD-projected
  Eigen::VectorXd y_bar;
  Eigen::MatrixXd P_thetay;   // cross-covariance (n x m)
  Eigen::MatrixXd C_yy;       // output covariance without noise, PSD-projected
};

UnscentedMoments unscented_moments(const Eigen::MatrixXd& sigma_points,
                                   const Eigen::MatrixXd& sigma_outputs,
                                   const TunerHyperparams& hp, const Eigen::MatrixXd& C_dtheta);

struct KalmanStep {
  Eigen::MatrixXd gain;        // K = P_thetay * (C_v + C_yy)^-1
  Eigen::VectorXd delta_ukf;   // -K * y_target
  Eigen::MatrixXd P_post;      // P_pred - K P_yy K^T, symmetrized + PSD-projected
};

KalmanStep kalman_step(const UnscentedMoments& m, const Eigen::MatrixXd& C_v,
                       const Eigen::VectorXd& y_target);

struct SpsaStep {
  Eigen::VectorXd g_hat;
  Eigen::VectorXd delta_spsa;  // -a_k * g_hat
};

// Two-sided simultaneous-perturbation gradient: g_i = (L+ - L-) / (2 p_i).
// Throws std::domain_error if any |p_i| < 1e-12 (zero-perturbation).
SpsaStep spsa_step(double loss_plus, double loss_minus, const Eigen::VectorXd& p, double a_k);

// theta_k + w * delta_ukf + (1 - w) * delta_spsa, projected onto the box.
Eigen::VectorXd fuse_and_update(const Eigen::VectorXd& theta, const Eigen::VectorXd& delta_ukf,
                                const Eigen::VectorXd& delta_spsa, double fusion_w,
                                const Eigen::VectorXd& theta_min, const Eigen::VectorXd& theta_max);

// a_{k+1} = a0 / (|y0|^2 + k^power), evaluated with this iteration's center
// rollout output.
double schedule_step_size(const TunerHyperparams& hp, double y0_sqnorm, int k);

struct AdaptedCovariances {
  Eigen::MatrixXd C_dtheta;
  Eigen::MatrixXd C_v;
};

// Forgetting-factor recursion with 1/k^2 damping:
//   C_dtheta' = alpha C_dtheta + (1-alpha) (dtheta dtheta^T) / k^2
//   C_v'      = alpha C_v      + (1-alpha) (C_yy + eps eps^T) / k^2
AdaptedCovariances adapt_covariances(const Eigen::MatrixXd& C_dtheta, const Eigen::MatrixXd& C_v,
                                     double alpha, const Eigen::VectorXd& dtheta,
                                     const Eigen::VectorXd& eps, const Eigen::MatrixXd& C_yy,
                                     int k);

// Candidate acceptance: completed nominal-twin rollout, candidate inside the
// box, and safety_cost <= (1 + margin) * incumbent safety_cost (same-seed
// pair). Returns true iff all three hold.
bool safety_check(double candidate_cost, bool candidate_completed,
                  const Eigen::VectorXd& theta_tilde, double incumbent_cost,
                  const Eigen::VectorXd& theta_min, const Eigen::VectorXd& theta_max,
                  double margin);

// --- oracle abstraction -----------------------------------------------------

struct OracleJob {
  JobKind kind = JobKind::kSigma;
  int index = 0;  // j within the kind
  Eigen::VectorXd theta;
  std::uint64_t seed = 0;
};

struct OracleEval {
  Eigen::VectorXd y;         // reduced output vector
  double loss = 0.0;         // |V|^2 equivalent driving the SPSA difference
  double safety_cost = 0.0;  // scalar consumed by the safety check
  bool completed = true;
};

// Batch evaluation facade the tuner drives. Implementations: the vehicle
// campaign (parallel digital-twin rollouts) and closed-form synthetic suites.
// evaluate must return one eval per job, in job order, deterministically from
// (job, k).
class OracleSuite {
 public:
  virtual ~OracleSuite() = default;
  virtual int output_dim() const = 0;
  virtual std::vector<OracleEval> evaluate(const std::vector<OracleJob>& jobs, int k) = 0;
};

struct UpdateReport {
  int k = 0;
  Eigen::VectorXd theta_before, theta_candidate, theta_next;
  Eigen::VectorXd delta_ukf, delta_spsa;
  Eigen::VectorXd y_target, y_bar, y_center;
  double kpi_target = 0.0;
  bool target_completed = true;
  bool accepted = false;
  double safety_ratio = 0.0;  // candidate cost / incumbent cost (inf on zero incumbent)
  double c_k = 0.0, c_spsa = 0.0;
  double a_used = 0.0, a_next = 0.0;
  double trace_P = 0.0, trace_C_dtheta = 0.0, trace_C_v = 0.0;
  Eigen::MatrixXd sigma_outputs;     // m x (2n+1), for spread diagnostics
  std::vector<bool> sigma_completed;
};

// One full adaptation iteration: sigma + SPSA + target dispatch, unscented
// Kalman update, SPSA gradient, fused candidate, same-seed safety check,
// covariance adaptation, and gain schedule. Transactional: on any error the
// belief is returned unchanged by the throw (no partial mutation is
// observable). Rollout bookkeeping per iteration: 2 n_theta + 4 adaptation
// rollouts (2n+1 sigma, 2 SPSA probes, 1 safety) plus the target-system
// rollout; the center sigma rollout doubles as the safety-check incumbent
// (nominal twin, shared seed) and as y0 in the gain schedule.
std::pair<ParameterBelief, UpdateReport> tune_iteration(const ParameterBelief& belief,
                                                        OracleSuite& oracle,
                                                        const TunerHyperparams& hp,
                                                        std::uint64_t campaign_seed);

}  // namespace twintune
