#include "twintune/plant.hpp"

#include <cmath>
#include <stdexcept>

#include "twintune/rng.hpp"

namespace twintune {

void validate_plant(const PlantParams& p) {
  const auto fail = [](const char* what) { throw std::invalid_argument(std::string("plant: ") + what); };
  if (!(p.mass_kg > 0.0)) fail("mass_kg must be > 0");
  if (!(p.inertia_z > 0.0)) fail("inertia_z must be > 0");
  if (!(p.lf > 0.0 && p.lr > 0.0)) fail("axle distances must be > 0");
  if (!(p.cornering_front > 0.0 && p.cornering_rear > 0.0)) fail("cornering stiffness must be > 0");
  if (!(p.drive_gain > 0.0)) fail("drive_gain must be > 0");
  if (p.drag_coeff < 0.0) fail("drag_coeff must be >= 0");
  if (p.actuator_delay_steps < 0) fail("actuator_delay_steps must be >= 0");
  if (!(p.blend_lo >= 0.0 && p.blend_hi > p.blend_lo)) fail("need 0 <= blend_lo < blend_hi");
}

double blend_lambda(double vx, const PlantParams& p) {
  if (vx <= p.blend_lo) return 0.0;
  if (vx >= p.blend_hi) return 1.0;
  const double t = (vx - p.blend_lo) / (p.blend_hi - p.blend_lo);
  return t * t * (3.0 - 2.0 * t);
}

namespace {

double station_rate(const StateVec& x, double kappa_c) {
  const double denom = 1.0 - x[kLateral] * kappa_c;
  if (denom <= 1e-6) throw std::domain_error("singular geometry: w*kappa approaches 1");
  return x[kVx] * std::cos(x[kHeadingDev]) / denom;
}

double longitudinal_accel(const StateVec& x, const PlantParams& p) {
  const double drive = p.drive_gain * x[kThrottle];
  const double drag = p.drag_coeff * x[kVx] * x[kVx];
  const double grade = p.mass_kg * kGravity * p.road_grade;
  return (drive - drag - grade) / p.mass_kg;
}

}  // namespace

StateVec f_kinematic(const StateVec& x, const InputVec& u, const PlantParams& p, double kappa_c) {
  const double L = p.wheelbase();
  const double tan_d = std::tan(x[kSteer]);
  const double cos_d = std::cos(x[kSteer]);
  const double s_dot = station_rate(x, kappa_c);
  const double vx_dot = longitudinal_accel(x, p);

  StateVec dx;
  dx[kVx] = vx_dot;
  // Time derivatives of the consistency relations vy = vx lr tan(d)/L and
  // r = vx tan(d)/L, so trajectories started on the consistency manifold
  // stay on it and the fused blend sees a full-rank vector field.
  dx[kVy] = (vx_dot * p.lr * tan_d + x[kVx] * p.lr * u[kSteerRate] / (cos_d * cos_d)) / L;
  dx[kYawRate] = (vx_dot * tan_d + x[kVx] * u[kSteerRate] / (cos_d * cos_d)) / L;
  dx[kStation] = s_dot;
  dx[kLateral] = x[kVx] * std::sin(x[kHeadingDev]);
  dx[kHeadingDev] = x[kVx] * tan_d / L - kappa_c * s_dot;
  dx[kSteer] = u[kSteerRate];
  dx[kThrottle] = u[kThrottleRate];
  return dx;
}

StateVec f_dynamic(const StateVec& x, const InputVec& u, const PlantParams& p, double kappa_c) {
  if (x[kVx] < 0.1) throw std::domain_error("dynamic model invalid at standstill (vx < 0.1)");
  const double s_dot = station_rate(x, kappa_c);
  const double cos_d = std::cos(x[kSteer]);

  const double alpha_f = x[kSteer] - std::atan((x[kVy] + p.lf * x[kYawRate]) / x[kVx]);
  const double alpha_r = -std::atan((x[kVy] - p.lr * x[kYawRate]) / x[kVx]);
  const double fyf = p.cornering_front * alpha_f;
  const double fyr = p.cornering_rear * alpha_r;

  StateVec dx;
  dx[kVx] = longitudinal_accel(x, p);
  dx[kVy] = (fyf * cos_d + fyr) / p.mass_kg - x[kVx] * x[kYawRate];
  dx[kYawRate] = (p.lf * fyf * cos_d - p.lr * fyr) / p.inertia_z;
  dx[kStation] = s_dot;
  dx[kLateral] = x[kVx] * std::sin(x[kHeadingDev]) + x[kVy] * std::cos(x[kHeadingDev]);
  dx[kHeadingDev] = x[kYawRate] - kappa_c * s_dot;
  dx[kSteer] = u[kSteerRate];
  dx[kThrottle] = u[kThrottleRate];
  return dx;
}

StateVec f_fused(const StateVec& x, const InputVec& u, const PlantParams& p, double kappa_c) {
  const double lam = blend_lambda(x[kVx], p);
  if (lam <= 0.0) return f_kinematic(x, u, p, kappa_c);
  // The dynamic side never sees vx below blend_lo (keeps the slip-angle
  // division well conditioned right at the blend onset).
  StateVec x_dyn = x;
  x_dyn[kVx] = std::max(x[kVx], p.blend_lo);
  const StateVec dyn = f_dynamic(x_dyn, u, p, kappa_c);
  if (lam >= 1.0) return dyn;
  return lam * dyn + (1.0 - lam) * f_kinematic(x, u, p, kappa_c);
}

namespace {

template <typename Field>
StateVec rk4(const StateVec& x, const InputVec& u, const PlantParams& p, const PathGeometry& path,
             double dt, Field field) {
  const auto deriv = [&](const StateVec& xs) {
    return field(xs, u, p, eval_path(path, xs[kStation]).kappa);
  };
  const StateVec k1 = deriv(x);
  const StateVec k2 = deriv(x + 0.5 * dt * k1);
  const StateVec k3 = deriv(x + 0.5 * dt * k2);
  const StateVec k4 = deriv(x + dt * k3);
  StateVec out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  if (out[kVx] < 0.0) out[kVx] = 0.0;  // no reverse in scope
  return out;
}

}  // namespace

StateVec step_kinematic(const StateVec& x, const InputVec& u, const PlantParams& p,
                        const PathGeometry& path, double dt) {
  return rk4(x, u, p, path, dt, f_kinematic);
}

StateVec step_dynamic(const StateVec& x, const InputVec& u, const PlantParams& p,
                      const PathGeometry& path, double dt) {
  return rk4(x, u, p, path, dt, f_dynamic);
}

StateVec step_fused(const StateVec& x, const InputVec& u, const PlantParams& p,
                    const PathGeometry& path, double dt) {
  return rk4(x, u, p, path, dt, f_fused);
}

void validate_randomization(const DomainRandomizationSpec& dr) {
  const auto fail = [](const char* what) {
    throw std::invalid_argument(std::string("domain randomization: ") + what);
  };
  const auto frac_ok = [](double f) { return f >= 0.0 && f < 1.0; };
  if (!frac_ok(dr.mass_frac) || !frac_ok(dr.inertia_frac) || !frac_ok(dr.cornering_frac) ||
      !frac_ok(dr.drive_gain_frac) || !frac_ok(dr.drag_frac))
    fail("fractional half-ranges must lie in [0, 1)");
  if (dr.grade_abs < 0.0) fail("grade_abs must be >= 0");
  if (dr.delay_steps_min < 0 || dr.delay_steps_max < dr.delay_steps_min)
    fail("need 0 <= delay_steps_min <= delay_steps_max");
  for (double s : dr.input_noise_std)
    if (s < 0.0) fail("input_noise_std must be >= 0");
  for (double s : dr.output_noise_std)
    if (s < 0.0) fail("output_noise_std must be >= 0");
  for (double s : dr.initial_offset_std)
    if (s < 0.0) fail("initial_offset_std must be >= 0");
}

PlantParams sample_plant(const PlantParams& nominal, const DomainRandomizationSpec& dr,
                         std::uint64_t seed) {
  validate_plant(nominal);
  validate_randomization(dr);
  NoiseStream rng(seed);
  const auto scale = [&](double value, double frac) {
    return value * rng.uniform(1.0 - frac, 1.0 + frac);
  };
  PlantParams p = nominal;
  p.mass_kg = scale(nominal.mass_kg, dr.mass_frac);
  p.inertia_z = scale(nominal.inertia_z, dr.inertia_frac);
  p.cornering_front = scale(nominal.cornering_front, dr.cornering_frac);
  p.cornering_rear = scale(nominal.cornering_rear, dr.cornering_frac);
  p.drive_gain = scale(nominal.drive_gain, dr.drive_gain_frac);
  p.drag_coeff = scale(nominal.drag_coeff, dr.drag_frac);
  p.road_grade = nominal.road_grade + rng.uniform(-dr.grade_abs, dr.grade_abs);
  p.actuator_delay_steps =
      dr.delay_steps_min +
      static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(dr.delay_steps_max - dr.delay_steps_min + 1)));
  validate_plant(p);
  return p;
}

}  // namespace twintune
