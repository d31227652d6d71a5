#include "twintune/synthetic.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

#include "twintune/rng.hpp"

namespace twintune {

AffineOracleSuite::AffineOracleSuite(AffineOracleSpec spec) : spec_(std::move(spec)) {
  if (spec_.M.rows() == 0 || spec_.M.cols() == 0)
    throw std::invalid_argument("affine oracle: M must be non-empty");
  if (spec_.b.size() != spec_.M.rows())
    throw std::invalid_argument("affine oracle: b size must match rows of M");
  if (!(spec_.noise_std >= 0.0))
    throw std::invalid_argument("affine oracle: noise_std must be >= 0");
}

std::vector<OracleEval> AffineOracleSuite::evaluate(const std::vector<OracleJob>& jobs, int) {
  std::vector<OracleEval> out(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const OracleJob& job = jobs[i];
    if (job.theta.size() != spec_.M.cols())
      throw std::invalid_argument("affine oracle: theta size mismatch");
    Eigen::VectorXd y = spec_.M * job.theta + spec_.b;
    if (spec_.noise_std > 0.0) {
      NoiseStream rng(job.seed);
      for (Eigen::Index r = 0; r < y.size(); ++r) y[r] += rng.normal(0.0, spec_.noise_std);
    }
    out[i].y = std::move(y);
    out[i].loss = out[i].y.squaredNorm();
    out[i].safety_cost = out[i].loss;
    out[i].completed = true;
  }
  return out;
}

Eigen::Vector2d SurfaceSpec::scaled(const Eigen::Vector2d& theta) const {
  return theta.cwiseQuotient(scale);
}

double SurfaceSpec::kpi(const Eigen::Vector2d& theta) const {
  const Eigen::Vector2d v = scaled(theta);
  const double trough = trough_gain * (v - scaled(well_theta)).squaredNorm();
  const double r2 = (v - scaled(dimple_theta)).squaredNorm();
  const double dimple = dimple_depth * std::exp(-r2 / (2.0 * dimple_sigma * dimple_sigma));
  return base + trough - dimple;
}

void validate_surface(const SurfaceSpec& spec) {
  const auto fail = [](const char* what) {
    throw std::invalid_argument(std::string("surface: ") + what);
  };
  if (!(spec.scale.array() > 0.0).all()) fail("scale must be > 0");
  if (!(spec.base > 0.0)) fail("base must be > 0");
  if (!(spec.trough_gain > 0.0)) fail("trough_gain must be > 0");
  if (!(spec.dimple_depth >= 0.0)) fail("dimple_depth must be >= 0");
  if (!(spec.dimple_sigma > 0.0)) fail("dimple_sigma must be > 0");
  if (!(spec.noise_std >= 0.0)) fail("noise_std must be >= 0");

  const Eigen::Vector2d va = spec.scaled(spec.dimple_theta);
  const Eigen::Vector2d vb = spec.scaled(spec.well_theta);
  if ((va - vb).norm() < 4.0 * spec.dimple_sigma) fail("basins overlap (centers too close)");

  // Grid positivity over the region spanning both basins plus margin, and a
  // local-vs-global ordering check near the two centers.
  const Eigen::Vector2d lo = va.cwiseMin(vb).array() - 2.0;
  const Eigen::Vector2d hi = va.cwiseMax(vb).array() + 2.0;
  constexpr int kGrid = 201;
  double min_near_dimple = std::numeric_limits<double>::infinity();
  double min_near_well = std::numeric_limits<double>::infinity();
  for (int i = 0; i < kGrid; ++i) {
    for (int j = 0; j < kGrid; ++j) {
      Eigen::Vector2d v;
      v[0] = lo[0] + (hi[0] - lo[0]) * i / (kGrid - 1);
      v[1] = lo[1] + (hi[1] - lo[1]) * j / (kGrid - 1);
      const double val = spec.kpi(v.cwiseProduct(spec.scale));
      if (!(val > 0.0)) fail("kpi must stay > 0 over the basin region");
      const double da = (v - va).norm();
      const double db = (v - vb).norm();
      if (da < 2.0 * spec.dimple_sigma) min_near_dimple = std::min(min_near_dimple, val);
      if (db < 2.0 * spec.dimple_sigma) min_near_well = std::min(min_near_well, val);
    }
  }
  if (!(min_near_dimple > min_near_well)) fail("dimple must lie strictly above the global basin");
  // Local-minimum existence: the dimple pull must beat the trough slope at
  // its center (max Gaussian slope depth*exp(-1/2)/sigma vs 2*gain*distance).
  const double pull = spec.dimple_depth * std::exp(-0.5) / spec.dimple_sigma;
  const double drift = 2.0 * spec.trough_gain * (va - vb).norm();
  if (!(pull > drift)) fail("dimple too shallow to form a local minimum");
}

Basin nearest_basin(const SurfaceSpec& spec, const Eigen::Vector2d& theta) {
  const Eigen::Vector2d v = spec.scaled(theta);
  const double da = (v - spec.scaled(spec.dimple_theta)).norm();
  const double db = (v - spec.scaled(spec.well_theta)).norm();
  return da <= db ? Basin::kDimple : Basin::kWell;
}

SurfaceOracleSuite::SurfaceOracleSuite(SurfaceSpec spec) : spec_(spec) { validate_surface(spec_); }

std::vector<OracleEval> SurfaceOracleSuite::evaluate(const std::vector<OracleJob>& jobs, int) {
  std::vector<OracleEval> out(jobs.size());
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const OracleJob& job = jobs[i];
    if (job.theta.size() != 2) throw std::invalid_argument("surface oracle: theta must be 2-dim");
    const double kpi = spec_.kpi(job.theta);
    double y = std::sqrt(2.0 * std::max(kpi, 0.0));
    if (spec_.noise_std > 0.0) {
      NoiseStream rng(job.seed);
      y += rng.normal(0.0, spec_.noise_std);
    }
    out[i].y = Eigen::VectorXd::Constant(1, y);
    out[i].loss = y * y;
    out[i].safety_cost = y * y;
    out[i].completed = true;
  }
  return out;
}

}  // namespace twintune
