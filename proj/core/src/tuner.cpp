#include "twintune/tuner.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "twintune/rng.hpp"

namespace twintune {

double TunerHyperparams::c0() const { return std::sqrt(ut_offset()); }

bool TunerHyperparams::adapt_enabled() const {
  if (adapt_override.has_value()) return *adapt_override;
  return mode == TunerMode::kAuks || mode == TunerMode::kUkfOnly;
}

double TunerHyperparams::effective_fusion_w() const {
  switch (mode) {
    case TunerMode::kUkfOnly: return 1.0;
    case TunerMode::kSpsaOnly: return 0.0;
    default: return fusion_w;
  }
}

TunerHyperparams TunerHyperparams::defaults_for(int n_theta) {
  TunerHyperparams hp;
  hp.n_theta = n_theta;
  hp.ut_lambda = 3.0 - n_theta;  // keeps n_theta + lambda = 3 at any dimension
  hp.theta_min = Eigen::VectorXd::Constant(n_theta, 1e-2);
  hp.theta_max = Eigen::VectorXd::Constant(n_theta, 1e3);
  return hp;
}

void validate_hyperparams(const TunerHyperparams& hp) {
  const auto fail = [](const char* what) { throw std::invalid_argument(std::string("tuner: ") + what); };
  if (hp.n_theta < 1) fail("n_theta must be >= 1");
  if (!(hp.ut_offset() > 0.0)) fail("n_theta + ut_lambda must be > 0");
  if (!(hp.fusion_w >= 0.0 && hp.fusion_w <= 1.0)) fail("fusion_w must be in [0, 1]");
  if (!(hp.alpha >= 0.0 && hp.alpha < 1.0)) fail("alpha must be in [0, 1)");
  if (!(hp.a0 > 0.0)) fail("a0 must be > 0");
  if (!(hp.gain_power > 0.0)) fail("gain_power must be > 0");
  if (hp.safety_margin < 0.0) fail("safety_margin must be >= 0");
  if (hp.theta_min.size() != hp.n_theta || hp.theta_max.size() != hp.n_theta)
    fail("theta bounds must be sized n_theta");
  for (int i = 0; i < hp.n_theta; ++i) {
    if (!(hp.theta_min[i] > 0.0)) fail("theta_min must be > 0 elementwise");
    if (!(hp.theta_min[i] < hp.theta_max[i])) fail("theta_min must be < theta_max elementwise");
  }
}

ParameterBelief make_belief(const Eigen::VectorXd& theta0, const Eigen::MatrixXd& P0,
                            const Eigen::MatrixXd& C_dtheta0, const Eigen::MatrixXd& C_v0,
                            const TunerHyperparams& hp) {
  validate_hyperparams(hp);
  const int n = hp.n_theta;
  if (theta0.size() != n) throw std::invalid_argument("belief: theta0 size mismatch");
  if (P0.rows() != n || P0.cols() != n) throw std::invalid_argument("belief: P0 must be n x n");
  if (C_dtheta0.rows() != n || C_dtheta0.cols() != n)
    throw std::invalid_argument("belief: C_dtheta0 must be n x n");
  if (C_v0.rows() != C_v0.cols()) throw std::invalid_argument("belief: C_v0 must be square");
  for (int i = 0; i < n; ++i) {
    if (!(theta0[i] >= hp.theta_min[i] && theta0[i] <= hp.theta_max[i]))
      throw std::domain_error("belief: theta0 outside the admissible box");
  }
  ParameterBelief b;
  b.theta = theta0;
  b.P = psd_project(P0);
  b.C_dtheta = psd_project(C_dtheta0);
  b.C_v = psd_project(C_v0);
  b.k = 1;
  b.a_k = hp.a0;
  return b;
}

Eigen::MatrixXd psd_project(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw std::runtime_error("psd_project: eigendecomposition failed");
  if ((eig.eigenvalues().array() >= 0.0).all()) return sym;
  const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
}

namespace {

// Lower Cholesky factor with escalating jitter for semidefinite inputs.
Eigen::MatrixXd robust_cholesky(const Eigen::MatrixXd& P) {
  const int n = static_cast<int>(P.rows());
  const double scale = std::max(P.trace() / n, 1e-300);
  double jitter = 0.0;
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::MatrixXd candidate = P;
    if (jitter > 0.0) candidate += jitter * Eigen::MatrixXd::Identity(n, n);
    Eigen::LLT<Eigen::MatrixXd> llt(candidate);
    if (llt.info() == Eigen::Success) return llt.matrixL();
    jitter = (jitter == 0.0) ? 1e-12 * scale : jitter * 100.0;
  }
  throw std::runtime_error("sigma points: covariance cannot be factored");
}

// Largest c >= 0 such that theta +/- c * dir stays inside [lo, hi].
double bound_scale(const Eigen::VectorXd& theta, const Eigen::VectorXd& dir,
                   const Eigen::VectorXd& lo, const Eigen::VectorXd& hi) {
  double c = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double mag = std::abs(dir[i]);
    if (mag < 1e-300) continue;
    const double room = std::min(hi[i] - theta[i], theta[i] - lo[i]);
    c = std::min(c, std::max(room, 0.0) / mag);
  }
  return c;
}

}  // namespace

SigmaSet generate_sigma_points(const ParameterBelief& belief, const TunerHyperparams& hp,
                               std::uint64_t delta_seed) {
  validate_hyperparams(hp);
  const int n = hp.n_theta;
  if (belief.theta.size() != n) throw std::invalid_argument("sigma points: theta size mismatch");
  for (int i = 0; i < n; ++i) {
    if (!(belief.theta[i] >= hp.theta_min[i] && belief.theta[i] <= hp.theta_max[i]))
      throw std::domain_error("sigma points: theta_k outside the admissible box");
  }

  SigmaSet out;
  out.chol = robust_cholesky(belief.P);

  double c = hp.c0();
  for (int j = 0; j < n; ++j)
    c = std::min(c, bound_scale(belief.theta, out.chol.col(j), hp.theta_min, hp.theta_max));
  out.c_k = c;

  out.points.resize(n, 2 * n + 1);
  out.points.col(0) = belief.theta;
  for (int j = 0; j < n; ++j) {
    out.points.col(1 + j) = belief.theta + c * out.chol.col(j);
    out.points.col(1 + n + j) = belief.theta - c * out.chol.col(j);
  }

  NoiseStream rng(delta_seed);
  out.spsa_delta.resize(n);
  for (int i = 0; i < n; ++i) out.spsa_delta[i] = rng.bernoulli_sign();
  // Probe amplitude follows the belief covariance (sqrt(P) * delta), shrunk
  // the same way as the sigma columns whenever the pair would exit the box.
  const Eigen::VectorXd dir = out.chol * out.spsa_delta;
  out.c_spsa = std::min(hp.c0(), bound_scale(belief.theta, dir, hp.theta_min, hp.theta_max));
  out.spsa_p = out.c_spsa * dir;
  out.theta_plus = belief.theta + out.spsa_p;
  out.theta_minus = belief.theta - out.spsa_p;
  return out;
}

UnscentedMoments unscented_moments(const Eigen::MatrixXd& sigma_points,
                                   const Eigen::MatrixXd& sigma_outputs,
                                   const TunerHyperparams& hp, const Eigen::MatrixXd& C_dtheta) {
  const int n = hp.n_theta;
  const int cols = 2 * n + 1;
  if (sigma_points.cols() != cols || sigma_points.rows() != n)
    throw std::invalid_argument("unscented moments: sigma point shape mismatch");
  if (sigma_outputs.cols() != cols)
    throw std::invalid_argument("unscented moments: output shape mismatch");
  const int m = static_cast<int>(sigma_outputs.rows());

  const double w0 = hp.weight_center();
  const double wj = hp.weight_leaf();
  const auto weight = [&](int j) { return j == 0 ? w0 : wj; };

  UnscentedMoments out;
  out.theta_bar = Eigen::VectorXd::Zero(n);
  out.y_bar = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < cols; ++j) {
    out.theta_bar += weight(j) * sigma_points.col(j);
    out.y_bar += weight(j) * sigma_outputs.col(j);
  }

  Eigen::MatrixXd P_sigma = Eigen::MatrixXd::Zero(n, n);
  out.P_thetay = Eigen::MatrixXd::Zero(n, m);
  Eigen::MatrixXd C_yy = Eigen::MatrixXd::Zero(m, m);
  for (int j = 0; j < cols; ++j) {
    const Eigen::VectorXd dth = sigma_points.col(j) - out.theta_bar;
    const Eigen::VectorXd dy = sigma_outputs.col(j) - out.y_bar;
    P_sigma.noalias() += weight(j) * dth * dth.transpose();
    out.P_thetay.noalias() += weight(j) * dth * dy.transpose();
    C_yy.noalias() += weight(j) * dy * dy.transpose();
  }
  out.P_pred = psd_project(C_dtheta + P_sigma);
  out.C_yy = psd_project(C_yy);
  return out;
}

KalmanStep kalman_step(const UnscentedMoments& m, const Eigen::MatrixXd& C_v,
                       const Eigen::VectorXd& y_target) {
  const int ny = static_cast<int>(m.C_yy.rows());
  if (C_v.rows() != ny || C_v.cols() != ny)
    throw std::invalid_argument("kalman step: C_v size mismatch");
  if (y_target.size() != ny) throw std::invalid_argument("kalman step: y_target size mismatch");

  Eigen::MatrixXd P_yy = C_v + m.C_yy;
  P_yy = 0.5 * (P_yy + P_yy.transpose());

  // Jittered solve when the innovation covariance is near-singular.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(P_yy);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / std::max(lo, 1e-300) > 1e12)
    P_yy += 1e-10 * Eigen::MatrixXd::Identity(ny, ny);

  KalmanStep out;
  out.gain = P_yy.ldlt().solve(m.P_thetay.transpose()).transpose();
  out.delta_ukf = -out.gain * y_target;
  out.P_post = psd_project(m.P_pred - out.gain * P_yy * out.gain.transpose());
  return out;
}

SpsaStep spsa_step(double loss_plus, double loss_minus, const Eigen::VectorXd& p, double a_k) {
  if (!std::isfinite(loss_plus) || !std::isfinite(loss_minus))
    throw std::invalid_argument("spsa: non-finite probe loss");
  SpsaStep out;
  out.g_hat.resize(p.size());
  const double dl = loss_plus - loss_minus;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (std::abs(p[i]) < 1e-12) throw std::domain_error("spsa: zero perturbation component");
    out.g_hat[i] = dl / (2.0 * p[i]);
  }
  out.delta_spsa = -a_k * out.g_hat;
  return out;
}

Eigen::VectorXd fuse_and_update(const Eigen::VectorXd& theta, const Eigen::VectorXd& delta_ukf,
                                const Eigen::VectorXd& delta_spsa, double fusion_w,
                                const Eigen::VectorXd& theta_min, const Eigen::VectorXd& theta_max) {
  Eigen::VectorXd next = theta + fusion_w * delta_ukf + (1.0 - fusion_w) * delta_spsa;
  for (Eigen::Index i = 0; i < next.size(); ++i)
    next[i] = std::clamp(next[i], theta_min[i], theta_max[i]);
  return next;
}

double schedule_step_size(const TunerHyperparams& hp, double y0_sqnorm, int k) {
  if (k < 1) throw std::invalid_argument("gain schedule: k must be >= 1");
  if (!(y0_sqnorm >= 0.0)) throw std::invalid_argument("gain schedule: |y0|^2 must be >= 0");
  return hp.a0 / (y0_sqnorm + std::pow(static_cast<double>(k), hp.gain_power));
}

AdaptedCovariances adapt_covariances(const Eigen::MatrixXd& C_dtheta, const Eigen::MatrixXd& C_v,
                                     double alpha, const Eigen::VectorXd& dtheta,
                                     const Eigen::VectorXd& eps, const Eigen::MatrixXd& C_yy,
                                     int k) {
  if (k < 1) throw std::invalid_argument("covariance adaptation: k must be >= 1");
  const double damp = 1.0 / (static_cast<double>(k) * static_cast<double>(k));
  AdaptedCovariances out;
  out.C_dtheta = alpha * C_dtheta + (1.0 - alpha) * damp * (dtheta * dtheta.transpose());
  out.C_v = alpha * C_v + (1.0 - alpha) * damp * (C_yy + eps * eps.transpose());
  return out;
}

bool safety_check(double candidate_cost, bool candidate_completed,
                  const Eigen::VectorXd& theta_tilde, double incumbent_cost,
                  const Eigen::VectorXd& theta_min, const Eigen::VectorXd& theta_max,
                  double margin) {
  if (!candidate_completed) return false;
  if (!std::isfinite(candidate_cost) || !std::isfinite(incumbent_cost)) return false;
  for (Eigen::Index i = 0; i < theta_tilde.size(); ++i) {
    // Strict interior: a candidate sitting exactly on the box wall would
    // degenerate the next iteration's perturbation scaling to zero.
    if (!(theta_tilde[i] > theta_min[i] && theta_tilde[i] < theta_max[i])) return false;
  }
  return candidate_cost <= (1.0 + margin) * incumbent_cost;
}

namespace {

void require_finite(const OracleEval& e, const char* what) {
  if (!e.y.allFinite() || !std::isfinite(e.loss) || !std::isfinite(e.safety_cost))
    throw std::runtime_error(std::string("oracle returned non-finite output for ") + what);
}

}  // namespace

std::pair<ParameterBelief, UpdateReport> tune_iteration(const ParameterBelief& belief,
                                                        OracleSuite& oracle,
                                                        const TunerHyperparams& hp,
                                                        std::uint64_t campaign_seed) {
  validate_hyperparams(hp);
  const int n = hp.n_theta;
  const int m = oracle.output_dim();
  const int k = belief.k;
  if (belief.C_v.rows() != m) throw std::invalid_argument("tune iteration: C_v/output dim mismatch");

  const SigmaSet sigma =
      generate_sigma_points(belief, hp, job_seed(campaign_seed, k, 0, JobKind::kSpsaDelta));

  // One batch: 2n+1 sigma rollouts, the SPSA pair, and the target-system
  // rollout. The center sigma point reuses the safety seed so the safety
  // check later compares same-seed nominal-twin rollouts.
  std::vector<OracleJob> jobs;
  jobs.reserve(static_cast<std::size_t>(2 * n + 4));
  for (int j = 0; j < 2 * n + 1; ++j) {
    OracleJob job;
    job.kind = JobKind::kSigma;
    job.index = j;
    job.theta = sigma.points.col(j);
    job.seed = (j == 0) ? job_seed(campaign_seed, k, 0, JobKind::kSafety)
                        : job_seed(campaign_seed, k, j, JobKind::kSigma);
    jobs.push_back(std::move(job));
  }
  jobs.push_back({JobKind::kSpsaPlus, 0, sigma.theta_plus,
                  job_seed(campaign_seed, k, 0, JobKind::kSpsaPlus)});
  jobs.push_back({JobKind::kSpsaMinus, 0, sigma.theta_minus,
                  job_seed(campaign_seed, k, 0, JobKind::kSpsaMinus)});
  jobs.push_back({JobKind::kTarget, 0, belief.theta,
                  job_seed(campaign_seed, k, 0, JobKind::kTarget)});

  const std::vector<OracleEval> evals = oracle.evaluate(jobs, k);
  if (evals.size() != jobs.size()) throw std::runtime_error("oracle returned wrong batch size");

  Eigen::MatrixXd sigma_ys(m, 2 * n + 1);
  std::vector<bool> sigma_completed(static_cast<std::size_t>(2 * n + 1));
  for (int j = 0; j < 2 * n + 1; ++j) {
    require_finite(evals[static_cast<std::size_t>(j)], "sigma rollout");
    if (evals[static_cast<std::size_t>(j)].y.size() != m)
      throw std::runtime_error("oracle output dimension mismatch");
    sigma_ys.col(j) = evals[static_cast<std::size_t>(j)].y;
    sigma_completed[static_cast<std::size_t>(j)] = evals[static_cast<std::size_t>(j)].completed;
  }
  const OracleEval& eval_plus = evals[static_cast<std::size_t>(2 * n + 1)];
  const OracleEval& eval_minus = evals[static_cast<std::size_t>(2 * n + 2)];
  const OracleEval& eval_target = evals[static_cast<std::size_t>(2 * n + 3)];
  require_finite(eval_plus, "spsa+ probe");
  require_finite(eval_minus, "spsa- probe");
  require_finite(eval_target, "target rollout");
  if (eval_target.y.size() != m) throw std::runtime_error("oracle output dimension mismatch");

  const UnscentedMoments moments = unscented_moments(sigma.points, sigma_ys, hp, belief.C_dtheta);
  const KalmanStep kal = kalman_step(moments, belief.C_v, eval_target.y);

  const OracleEval& eval_center = evals.front();
  const double a_k = schedule_step_size(hp, eval_center.y.squaredNorm(), k);

  const double w_eff = hp.effective_fusion_w();
  SpsaStep sp;
  if (w_eff < 1.0) {
    sp = spsa_step(eval_plus.loss, eval_minus.loss, sigma.spsa_p, a_k);
  } else {
    sp.g_hat = Eigen::VectorXd::Zero(n);
    sp.delta_spsa = Eigen::VectorXd::Zero(n);
  }
  const Eigen::VectorXd theta_tilde = fuse_and_update(
      belief.theta, kal.delta_ukf, sp.delta_spsa, w_eff, hp.theta_min, hp.theta_max);

  // Same-seed nominal-twin pair: candidate vs the center sigma rollout.
  const std::vector<OracleEval> safety_evals = oracle.evaluate(
      {{JobKind::kSafety, 0, theta_tilde, job_seed(campaign_seed, k, 0, JobKind::kSafety)}}, k);
  if (safety_evals.size() != 1) throw std::runtime_error("oracle returned wrong batch size");
  const OracleEval& eval_safety = safety_evals.front();
  require_finite(eval_safety, "safety rollout");

  const bool accepted =
      safety_check(eval_safety.safety_cost, eval_safety.completed, theta_tilde,
                   eval_center.safety_cost, hp.theta_min, hp.theta_max, hp.safety_margin);

  ParameterBelief next;
  next.theta = accepted ? theta_tilde : belief.theta;
  next.P = (hp.mode == TunerMode::kSpsaOnly) ? belief.P : kal.P_post;
  if (hp.adapt_enabled()) {
    // Realized step only: a rejected candidate must not widen the process
    // noise, or one wild probe difference poisons every later iteration.
    const Eigen::VectorXd dtheta = next.theta - belief.theta;
    const Eigen::VectorXd eps = eval_target.y - moments.y_bar;
    const AdaptedCovariances ad =
        adapt_covariances(belief.C_dtheta, belief.C_v, hp.alpha, dtheta, eps, moments.C_yy, k);
    next.C_dtheta = ad.C_dtheta;
    next.C_v = ad.C_v;
  } else {
    next.C_dtheta = belief.C_dtheta;
    next.C_v = belief.C_v;
  }
  next.k = k + 1;
  next.a_k = a_k;

  UpdateReport rep;
  rep.k = k;
  rep.theta_before = belief.theta;
  rep.theta_candidate = theta_tilde;
  rep.theta_next = next.theta;
  rep.delta_ukf = kal.delta_ukf;
  rep.delta_spsa = sp.delta_spsa;
  rep.y_target = eval_target.y;
  rep.y_bar = moments.y_bar;
  rep.y_center = eval_center.y;
  rep.kpi_target = 0.5 * eval_target.loss;
  rep.target_completed = eval_target.completed;
  rep.accepted = accepted;
  rep.safety_ratio = eval_center.safety_cost != 0.0
                         ? eval_safety.safety_cost / eval_center.safety_cost
                         : std::numeric_limits<double>::infinity();
  rep.c_k = sigma.c_k;
  rep.c_spsa = sigma.c_spsa;
  rep.a_used = a_k;
  rep.a_next = schedule_step_size(hp, eval_center.y.squaredNorm(), k + 1);
  rep.trace_P = next.P.trace();
  rep.trace_C_dtheta = next.C_dtheta.trace();
  rep.trace_C_v = next.C_v.trace();
  rep.sigma_outputs = sigma_ys;
  rep.sigma_completed = sigma_completed;
  return {std::move(next), std::move(rep)};
}

}  // namespace twintune
