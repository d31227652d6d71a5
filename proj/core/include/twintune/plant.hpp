#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>

#include "twintune/path.hpp"

namespace twintune {

// State layout: x = [vx, vy, r, s, w, theta_dev, delta, throttle].
using StateVec = Eigen::Matrix<double, 8, 1>;
// Input layout: u = [delta_rate, throttle_rate].
using InputVec = Eigen::Matrix<double, 2, 1>;

enum StateIndex : int { kVx = 0, kVy, kYawRate, kStation, kLateral, kHeadingDev, kSteer, kThrottle };
enum InputIndex : int { kSteerRate = 0, kThrottleRate };

inline constexpr int kStateDim = 8;
inline constexpr int kInputDim = 2;
inline constexpr double kGravity = 9.81;  // m/s^2

struct PlantParams {
  double mass_kg = 1600.0;
  double inertia_z = 2500.0;        // kg m^2
  double lf = 1.30;                 // CoG to front axle (m)
  double lr = 1.45;                 // CoG to rear axle (m)
  double cornering_front = 70000.0; // front cornering stiffness (N/rad)
  double cornering_rear = 80000.0;  // rear cornering stiffness (N/rad)
  double drive_gain = 3600.0;       // longitudinal force per unit throttle (N)
  double drag_coeff = 0.9;          // quadratic drag (N s^2/m^2)
  double road_grade = 0.0;          // longitudinal slope fraction (e.g. 0.04)
  int actuator_delay_steps = 0;     // steering-rate command delay (control steps)
  double blend_lo = 0.5;            // below: pure kinematic model (m/s)
  double blend_hi = 2.0;            // above: pure dynamic model (m/s)

  double wheelbase() const { return lf + lr; }
};

// Throws std::invalid_argument naming the violated property.
void validate_plant(const PlantParams& p);

// Cubic smoothstep blend weight lambda(vx): 0 at vx <= blend_lo, 1 at
// vx >= blend_hi, C1 in between.
double blend_lambda(double vx, const PlantParams& p);

// Continuous-time derivatives. kappa_c is the path curvature at the current
// station. Both fields live on the full 8-dim state space: the kinematic
// model carries algebraic vy/r derivatives (differentiated consistency
// relations vy = vx lr tan(delta)/L, r = vx tan(delta)/L) so the fused blend
// is well defined. Throws std::domain_error on singular geometry
// (1 - w*kappa_c <= 1e-6).
StateVec f_kinematic(const StateVec& x, const InputVec& u, const PlantParams& p, double kappa_c);
// Throws std::domain_error on singular geometry or vx < 0.1 (standstill).
StateVec f_dynamic(const StateVec& x, const InputVec& u, const PlantParams& p, double kappa_c);
// lambda-weighted blend; the dynamic side is evaluated with vx floored at
// blend_lo and is skipped entirely when lambda = 0.
StateVec f_fused(const StateVec& x, const InputVec& u, const PlantParams& p, double kappa_c);

// One classic RK4 step of dt seconds. Curvature is re-evaluated from the
// path at each stage's station. vx is clamped at 0 after the step (no
// reverse in scope). Pure functions of their arguments.
StateVec step_kinematic(const StateVec& x, const InputVec& u, const PlantParams& p,
                        const PathGeometry& path, double dt);
StateVec step_dynamic(const StateVec& x, const InputVec& u, const PlantParams& p,
                      const PathGeometry& path, double dt);
StateVec step_fused(const StateVec& x, const InputVec& u, const PlantParams& p,
                    const PathGeometry& path, double dt);

// Domain-randomization spec: fractional half-ranges are uniform multiplicative
// (param * U[1-frac, 1+frac]); grade is uniform additive; the delay is a
// uniform integer draw over [delay_steps_min, delay_steps_max].
struct DomainRandomizationSpec {
  double mass_frac = 0.0;
  double inertia_frac = 0.0;
  double cornering_frac = 0.0;
  double drive_gain_frac = 0.0;
  double drag_frac = 0.0;
  double grade_abs = 0.0;
  int delay_steps_min = 0;
  int delay_steps_max = 0;
  std::array<double, 2> input_noise_std{0.0, 0.0};              // on (delta_rate, throttle_rate)
  std::array<double, 5> output_noise_std{0.0, 0.0, 0.0, 0.0, 0.0};  // on measured (w, vx, vy, r, theta_dev)
  std::array<double, 2> initial_offset_std{0.0, 0.0};           // on initial (w, theta_dev)
  bool randomize_paths = false;
};

void validate_randomization(const DomainRandomizationSpec& dr);

// Deterministic draw of a randomized twin around the nominal parameters.
PlantParams sample_plant(const PlantParams& nominal, const DomainRandomizationSpec& dr,
                         std::uint64_t seed);

}  // namespace twintune
