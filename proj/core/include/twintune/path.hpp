#pragma once

#include <string>
#include <vector>

namespace twintune {

// Reference path in curvilinear coordinates: curvature and speed profile
// sampled against arc length, plus the lateral tube the vehicle must stay in.
struct PathGeometry {
  std::string name;
  std::vector<double> station;        // arc length samples s (m), strictly increasing from 0
  std::vector<double> curvature;      // kappa(s) (1/m)
  std::vector<double> speed_profile;  // v_ref(s) (m/s), >= 0, terminal value 0 (task ends at rest)
  double lane_left = -2.0;            // w_l (m), <= 0 by sign convention
  double lane_right = 2.0;            // w_r (m), >= 0

  double length() const { return station.empty() ? 0.0 : station.back(); }
};

struct PathSample {
  double kappa = 0.0;
  double v_ref = 0.0;
};

// Hard ceiling on |kappa| accepted by validate_path (min radius 2 m at desk scale).
inline constexpr double kKappaCeiling = 0.5;

// Throws std::invalid_argument naming the violated property.
void validate_path(const PathGeometry& path);

// Linear interpolation, clamped at both ends (s < 0 -> first sample,
// s > length -> last sample). Pre: validate_path holds.
PathSample eval_path(const PathGeometry& path, double s);

// CSV round trip. Format: two metadata lines "w_l=<val>" and "w_r=<val>",
// a header "s,kappa,v_ref", then one row per sample.
void save_path_csv(const PathGeometry& path, const std::string& filename);
PathGeometry load_path_csv(const std::string& filename);

// Bundled synthetic path library (deterministic closed forms, 0.5 m spacing).
// Index 0 is the default training path.
std::vector<PathGeometry> bundled_paths();

// Helper used by the factories and tests: sample kappa_fn/speed_fn every ds
// over [0, length], then taper the last taper_len metres of speed smoothly to
// an exact terminal 0.
PathGeometry make_path(const std::string& name, double length, double ds,
                       double (*kappa_fn)(double), double (*speed_fn)(double),
                       double taper_len, double lane_left, double lane_right);

}  // namespace twintune
