#include "twintune/path.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace twintune {

void validate_path(const PathGeometry& path) {
  const auto fail = [&](const std::string& what) {
    throw std::invalid_argument("path '" + path.name + "': " + what);
  };
  const std::size_t n = path.station.size();
  if (n < 2) fail("needs at least two samples");
  if (path.curvature.size() != n || path.speed_profile.size() != n)
    fail("station/curvature/speed_profile lengths differ");
  if (path.station.front() != 0.0) fail("station must start at 0");
  for (std::size_t i = 1; i < n; ++i)
    if (!(path.station[i] > path.station[i - 1])) fail("station not strictly increasing");
  for (double k : path.curvature) {
    if (!std::isfinite(k) || std::abs(k) > kKappaCeiling) fail("curvature exceeds ceiling");
  }
  for (double v : path.speed_profile) {
    if (!std::isfinite(v) || v < 0.0) fail("speed_profile must be >= 0");
  }
  if (path.speed_profile.back() != 0.0) fail("speed_profile must end at 0 (task ends at rest)");
  if (!(path.lane_left <= 0.0 && path.lane_right >= 0.0)) fail("lane bounds must satisfy w_l <= 0 <= w_r");
}

PathSample eval_path(const PathGeometry& path, double s) {
  const auto& st = path.station;
  if (s <= st.front()) return {path.curvature.front(), path.speed_profile.front()};
  if (s >= st.back()) return {path.curvature.back(), path.speed_profile.back()};
  const auto it = std::upper_bound(st.begin(), st.end(), s);
  const std::size_t i = static_cast<std::size_t>(it - st.begin());  // st[i-1] <= s < st[i]
  const double t = (s - st[i - 1]) / (st[i] - st[i - 1]);
  return {path.curvature[i - 1] + t * (path.curvature[i] - path.curvature[i - 1]),
          path.speed_profile[i - 1] + t * (path.speed_profile[i] - path.speed_profile[i - 1])};
}

void save_path_csv(const PathGeometry& path, const std::string& filename) {
  std::ofstream out(filename);
  if (!out) throw std::runtime_error("cannot open for writing: " + filename);
  char buf[96];
  std::snprintf(buf, sizeof buf, "w_l=%.17g\n", path.lane_left);
  out << buf;
  std::snprintf(buf, sizeof buf, "w_r=%.17g\n", path.lane_right);
  out << buf;
  out << "s,kappa,v_ref\n";
  for (std::size_t i = 0; i < path.station.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", path.station[i], path.curvature[i],
                  path.speed_profile[i]);
    out << buf;
  }
  if (!out) throw std::runtime_error("write failed: " + filename);
}

PathGeometry load_path_csv(const std::string& filename) {
  std::ifstream in(filename);
  if (!in) throw std::runtime_error("cannot open path file: " + filename);
  PathGeometry path;
  path.name = filename;
  bool have_wl = false, have_wr = false, have_header = false;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fail = [&](const std::string& what) {
      throw std::runtime_error(filename + ":" + std::to_string(lineno) + ": " + what);
    };
    if (line.rfind("w_l=", 0) == 0) {
      path.lane_left = std::stod(line.substr(4));
      have_wl = true;
    } else if (line.rfind("w_r=", 0) == 0) {
      path.lane_right = std::stod(line.substr(4));
      have_wr = true;
    } else if (!have_header) {
      if (line != "s,kappa,v_ref") fail("expected header 's,kappa,v_ref', got '" + line + "'");
      have_header = true;
    } else {
      std::istringstream row(line);
      double s, k, v;
      char c1, c2;
      if (!(row >> s >> c1 >> k >> c2 >> v) || c1 != ',' || c2 != ',') fail("malformed data row");
      path.station.push_back(s);
      path.curvature.push_back(k);
      path.speed_profile.push_back(v);
    }
  }
  if (!have_wl || !have_wr) throw std::runtime_error(filename + ": missing w_l=/w_r= metadata");
  if (!have_header) throw std::runtime_error(filename + ": missing 's,kappa,v_ref' header");
  validate_path(path);
  return path;
}

PathGeometry make_path(const std::string& name, double length, double ds,
                       double (*kappa_fn)(double), double (*speed_fn)(double),
                       double taper_len, double lane_left, double lane_right) {
  PathGeometry p;
  p.name = name;
  p.lane_left = lane_left;
  p.lane_right = lane_right;
  const int n = static_cast<int>(std::ceil(length / ds));
  for (int i = 0; i <= n; ++i) {
    const double s = std::min(length, i * ds);
    double v = speed_fn(s);
    // Smooth taper to exactly 0 over the final taper_len metres.
    if (s > length - taper_len) {
      double t = (length - s) / taper_len;  // 1 -> 0
      v *= t * t * (3.0 - 2.0 * t);
    }
    p.station.push_back(s);
    p.curvature.push_back(kappa_fn(s));
    p.speed_profile.push_back(v);
  }
  p.speed_profile.back() = 0.0;
  validate_path(p);
  return p;
}

namespace {

// Closed-form kappa/speed shapes for the bundled library. Kept as named
// functions (not lambdas) so make_path can take plain function pointers.
double kappa_zero(double) { return 0.0; }

double kappa_dynamic(double s) {
  // Mixed-frequency S content with a gentle ramp-in over the first 12 m.
  const double gate = std::min(1.0, s / 12.0);
  return gate * (0.07 * std::sin(2.0 * M_PI * s / 90.0) + 0.045 * std::sin(2.0 * M_PI * s / 37.0 + 1.2));
}
double speed_dynamic(double s) { return 2.8 + 1.5 * std::sin(2.0 * M_PI * s / 45.0 + 0.5); }

double speed_ramp(double s) { return std::min(4.0, 2.0 + 0.05 * s); }

double kappa_const_radius(double s) {
  const double gate = std::min(1.0, s / 10.0);
  return gate * 0.04;  // R = 25 m after the lead-in
}
double speed_three(double) { return 3.0; }

double kappa_sine(double s) {
  const double gate = std::min(1.0, s / 10.0);
  return gate * 0.06 * std::sin(2.0 * M_PI * s / 55.0);
}
double speed_sine(double s) { return 3.0 + 0.5 * std::sin(2.0 * M_PI * s / 45.0); }

double kappa_parking(double s) {
  // Straight approach, then a tightening turn into the bay near the end.
  if (s < 60.0) return 0.0;
  const double t = std::min(1.0, (s - 60.0) / 25.0);
  return 0.12 * t * t * (3.0 - 2.0 * t);
}
double speed_parking(double s) { return s < 55.0 ? 2.5 : std::max(1.2, 2.5 - 0.06 * (s - 55.0)); }

double kappa_uphill(double s) {
  const double gate = std::min(1.0, s / 15.0);
  return gate * 0.025 * std::sin(2.0 * M_PI * s / 120.0);
}
double speed_uphill(double s) { return 2.2 + 0.6 * std::sin(2.0 * M_PI * s / 95.0); }

double kappa_chicane(double s) {
  // Alternating +/- arcs with short straights between them.
  const double period = 46.0;
  const double u = std::fmod(s, period);
  const double gate = std::min(1.0, s / 10.0);
  if (u < 14.0) return gate * 0.10 * std::sin(M_PI * u / 14.0);
  if (u < 23.0) return 0.0;
  if (u < 37.0) return gate * -0.10 * std::sin(M_PI * (u - 23.0) / 14.0);
  return 0.0;
}
double speed_chicane(double s) { return 2.4 + 0.4 * std::sin(2.0 * M_PI * s / 60.0); }

double kappa_sweep(double s) {
  const double gate = std::min(1.0, s / 15.0);
  return gate * (0.035 + 0.015 * std::sin(2.0 * M_PI * s / 140.0));
}
double speed_sweep(double s) { return std::min(4.5, 3.0 + 0.02 * s); }

}  // namespace

std::vector<PathGeometry> bundled_paths() {
  std::vector<PathGeometry> lib;
  // Lengths sized so an 85 s window at the profile speed stays on the active
  // part of each path (the parking approach is deliberately short and slow).
  lib.push_back(make_path("dynamic_s_mix", 340.0, 0.5, kappa_dynamic, speed_dynamic, 12.0, -2.0, 2.0));
  lib.push_back(make_path("straight_ramp", 340.0, 0.5, kappa_zero, speed_ramp, 12.0, -2.0, 2.0));
  lib.push_back(make_path("constant_radius", 300.0, 0.5, kappa_const_radius, speed_three, 10.0, -2.0, 2.0));
  lib.push_back(make_path("sinusoidal", 300.0, 0.5, kappa_sine, speed_sine, 10.0, -2.0, 2.0));
  lib.push_back(make_path("parking_approach", 110.0, 0.5, kappa_parking, speed_parking, 8.0, -2.0, 2.0));
  lib.push_back(make_path("uphill_cruise", 260.0, 0.5, kappa_uphill, speed_uphill, 12.0, -2.0, 2.0));
  lib.push_back(make_path("chicane", 280.0, 0.5, kappa_chicane, speed_chicane, 10.0, -2.0, 2.0));
  lib.push_back(make_path("long_sweep", 380.0, 0.5, kappa_sweep, speed_sweep, 12.0, -2.0, 2.0));
  return lib;
}

}  // namespace twintune
