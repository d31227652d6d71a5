#pragma once

#include <Eigen/Core>

#include "twintune/tuner.hpp"

namespace twintune {

// Closed-form oracle y = M theta + b (+ iid gaussian noise drawn from the job
// seed), loss = |y|^2. Ground truth for Kalman-exactness and convergence
// tests: the optimum is the least-squares solution of M theta + b = 0.
struct AffineOracleSpec {
  Eigen::MatrixXd M;
  Eigen::VectorXd b;
  double noise_std = 0.0;
};

class AffineOracleSuite final : public OracleSuite {
 public:
  explicit AffineOracleSuite(AffineOracleSpec spec);

  int output_dim() const override { return static_cast<int>(spec_.M.rows()); }
  std::vector<OracleEval> evaluate(const std::vector<OracleJob>& jobs, int k) override;

  const AffineOracleSpec& spec() const { return spec_; }

 private:
  AffineOracleSpec spec_;
};

// Two-parameter bimodal objective in scaled coordinates v = theta ./ scale:
//
//   kpi(theta) = base + trough_gain * |v - v_well|^2
//                - dimple_depth * exp(-|v - v_dimple|^2 / (2 sigma^2))
//
// a broad quadratic trough with its global optimum at well_theta plus a
// narrow local basin (the "dimple") at dimple_theta. The oracle reports the
// 1-dim output y = sqrt(2 kpi) + noise so that loss = |y|^2 ~ 2 kpi and the
// logged KPI (0.5 loss) matches the surface value.
struct SurfaceSpec {
  Eigen::Vector2d scale{100.0, 10.0};
  Eigen::Vector2d dimple_theta{300.0, 3.0};  // shallow local basin
  Eigen::Vector2d well_theta{320.0, 30.0};   // global basin
  double base = 0.05;
  double trough_gain = 1.0;
  double dimple_depth = 4.5;
  double dimple_sigma = 0.45;  // width in scaled coordinates
  double noise_std = 0.1;      // on y

  Eigen::Vector2d scaled(const Eigen::Vector2d& theta) const;
  double kpi(const Eigen::Vector2d& theta) const;
};

// Checks positivity of kpi on a grid spanning both basins (the sqrt in the
// output requires kpi > 0) and that the dimple is an actual local minimum
// lying strictly above the global one. Throws std::invalid_argument.
void validate_surface(const SurfaceSpec& spec);

enum class Basin { kDimple, kWell };

// Nearest-center classification in scaled coordinates.
Basin nearest_basin(const SurfaceSpec& spec, const Eigen::Vector2d& theta);

class SurfaceOracleSuite final : public OracleSuite {
 public:
  explicit SurfaceOracleSuite(SurfaceSpec spec);

  int output_dim() const override { return 1; }
  std::vector<OracleEval> evaluate(const std::vector<OracleJob>& jobs, int k) override;

  const SurfaceSpec& spec() const { return spec_; }

 private:
  SurfaceSpec spec_;
};

}  // namespace twintune
