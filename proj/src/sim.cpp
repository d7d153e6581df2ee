#include "svloc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <utility>

#include <json.hpp>

#include "svloc/error.hpp"
#include "svloc/rng.hpp"

namespace svloc {

namespace {

// Deterministic sub-stream tags; combined with the master seed and a per-call
// seed so independent generators never share a random sequence.
constexpr std::uint64_t kStreamDescriptor = 0x6465736372ULL;
constexpr std::uint64_t kStreamObservations = 0x6f627365ULL;
constexpr std::uint64_t kStreamPano = 0x70616e6fULL;
constexpr std::uint64_t kStreamImu = 0x696d7531ULL;
constexpr std::uint64_t kStreamGps = 0x67707331ULL;

Vec2 heading_dir(double heading) { return Vec2(std::cos(heading), std::sin(heading)); }
Vec2 heading_left(double heading) { return Vec2(-std::sin(heading), std::cos(heading)); }

Vec2 rotate2(double angle, const Vec2& v) {
  const double c = std::cos(angle), s = std::sin(angle);
  return Vec2(c * v.x() - s * v.y(), s * v.x() + c * v.y());
}

/// Deterministic per-landmark splat brightness in [0.75, 1.25).
double landmark_amplitude(int id) {
  const std::uint64_t h = static_cast<std::uint64_t>(static_cast<std::uint32_t>(id)) * 2654435761ULL;
  return 0.75 + 0.5 * static_cast<double>((h >> 16) & 0xFFF) / 4096.0;
}

void validate_noise(const NoiseConfig& n) {
  const double sigmas[] = {n.pixel_sigma_px,        n.descriptor_sigma, n.pano_pos_sigma_m,
                           n.pano_heading_sigma_rad, n.accel_noise_density,
                           n.gyro_noise_density,     n.gps_sigma_m,      n.ar_drift_rad_per_m};
  for (double s : sigmas) {
    if (!(s >= 0.0) || !std::isfinite(s)) throw DomainError("noise sigmas must be finite and >= 0");
  }
  if (!(n.outlier_fraction >= 0.0) || !(n.outlier_fraction < 1.0)) {
    throw DomainError("outlier_fraction must be in [0, 1)");
  }
  if (!(n.gps_rate_hz > 0.0)) throw DomainError("gps_rate_hz must be positive");
  if (!n.accel_bias.allFinite() || !n.gyro_bias.allFinite()) {
    throw DomainError("IMU biases must be finite");
  }
}

void validate_config(const SimConfig& c) {
  validate_noise(c.noise);
  if (!(c.cruise_speed_mps > 0.0)) throw DomainError("cruise_speed_mps must be positive");
  if (!(c.accel_limit_mps2 > 0.0)) throw DomainError("accel_limit_mps2 must be positive");
  if (!(c.jerk_ramp_s > 0.0)) throw DomainError("jerk_ramp_s must be positive");
  if (c.cruise_speed_mps / c.accel_limit_mps2 < c.jerk_ramp_s) {
    throw DomainError("cruise speed too low for the jerk ramp: need cruise/accel >= jerk_ramp_s");
  }
  if (!(c.initial_stationary_s >= 0.0)) throw DomainError("initial_stationary_s must be >= 0");
  if (!(c.imu_rate_hz > 0.0) || !(c.ar_rate_hz > 0.0)) throw DomainError("sensor rates must be positive");
  if (!(c.noise.gps_rate_hz <= c.imu_rate_hz)) throw DomainError("GPS rate must not exceed the IMU rate");
  if (!(c.ar_rate_hz <= c.imu_rate_hz)) throw DomainError("AR rate must not exceed the IMU rate");
  if (!(c.corner_radius_m > 0.0)) throw DomainError("corner_radius_m must be positive");
  if (!(c.pano_spacing_m > 0.0)) throw DomainError("pano_spacing_m must be positive");
  if (!(c.landmark_spacing_m > 0.0)) throw DomainError("landmark_spacing_m must be positive");
  for (double off : {c.facade_offset_left_m, c.facade_offset_right_m}) {
    if (!(off >= 5.0) || !(off <= 30.0)) throw DomainError("facade offsets must be in [5, 30] m");
  }
  if (!(c.visibility_radius_m > 0.0)) throw DomainError("visibility_radius_m must be positive");
  if (c.descriptor_dim < 2) throw DomainError("descriptor_dim must be >= 2");
  if (c.pano_width_px < 8 || c.pano_height_px < 4) throw DomainError("panorama raster too small");
  for (const StopSpec& s : c.stops) {
    if (!(s.duration_s >= 0.0)) throw DomainError("stop duration must be >= 0");
  }
}

// ---------------------------------------------------------------------------
// Speed profile

struct PhaseState {
  std::vector<MotionPhase> phases;
  double t = 0.0;
  double s = 0.0;
  double v = 0.0;

  void advance(double duration, double a0, double jerk) {
    if (duration <= 0.0) return;
    phases.push_back({t, duration, s, v, a0, jerk});
    const double d = duration;
    t += d;
    s += v * d + 0.5 * a0 * d * d + jerk * d * d * d / 6.0;
    v += a0 * d + 0.5 * jerk * d * d;
  }

  /// Jerk-limited speed change 0 -> cruise (or mirrored); `sign` is +1 to
  /// accelerate, -1 to brake. Ends with the speed snapped exactly to the
  /// target so stationary phases are exactly stationary.
  void s_curve(double cruise, double accel, double ramp, double sign) {
    const double jerk = sign * accel / ramp;
    const double hold = cruise / accel - ramp;  // validated >= 0
    advance(ramp, 0.0, jerk);
    advance(hold, sign * accel, 0.0);
    advance(ramp, sign * accel, -jerk);
    v = sign > 0.0 ? cruise : 0.0;
  }
};

/// Distance covered by one full 0 <-> cruise jerk-limited speed change.
double ramp_distance(double cruise, double accel, double ramp) {
  return cruise * (2.0 * ramp + (cruise / accel - ramp)) / 2.0;
}

std::vector<MotionPhase> build_profile(double total_length, const SimConfig& cfg,
                                       std::vector<StopSpec> stops, double* duration_out) {
  std::sort(stops.begin(), stops.end(),
            [](const StopSpec& a, const StopSpec& b) { return a.at_s < b.at_s; });
  const double d_ramp = ramp_distance(cfg.cruise_speed_mps, cfg.accel_limit_mps2, cfg.jerk_ramp_s);

  std::vector<double> waypoints;
  waypoints.push_back(0.0);
  for (const StopSpec& s : stops) waypoints.push_back(s.at_s);
  waypoints.push_back(total_length);
  for (std::size_t i = 1; i < waypoints.size(); ++i) {
    if (!(waypoints[i] > waypoints[i - 1])) {
      throw DomainError("stops must be strictly increasing and inside the track");
    }
    if (waypoints[i] - waypoints[i - 1] < 2.0 * d_ramp) {
      throw DomainError("stops too close together for the speed profile (need >= " +
                        std::to_string(2.0 * d_ramp) + " m between rest points)");
    }
  }

  PhaseState ps;
  ps.advance(cfg.initial_stationary_s, 0.0, 0.0);
  for (std::size_t leg = 0; leg + 1 < waypoints.size(); ++leg) {
    ps.s_curve(cfg.cruise_speed_mps, cfg.accel_limit_mps2, cfg.jerk_ramp_s, +1.0);
    const double cruise_len = (waypoints[leg + 1] - waypoints[leg]) - 2.0 * d_ramp;
    ps.advance(cruise_len / cfg.cruise_speed_mps, 0.0, 0.0);
    ps.s_curve(cfg.cruise_speed_mps, cfg.accel_limit_mps2, cfg.jerk_ramp_s, -1.0);
    ps.s = waypoints[leg + 1];  // snap away sub-nanometer integration residue
    if (leg + 2 < waypoints.size()) ps.advance(stops[leg].duration_s, 0.0, 0.0);
  }
  *duration_out = ps.t;
  return std::move(ps.phases);
}

const MotionPhase* phase_at(const std::vector<MotionPhase>& phases, double t) {
  if (phases.empty()) return nullptr;
  auto it = std::upper_bound(phases.begin(), phases.end(), t,
                             [](double value, const MotionPhase& p) { return value < p.t0; });
  if (it == phases.begin()) return &phases.front();
  return &*(it - 1);
}

// ---------------------------------------------------------------------------
// Path geometry

struct BuiltPath {
  std::vector<PathPiece> pieces;
  std::vector<Vec2> polyline;       // unrounded vertices
  std::vector<double> corner_mid_s;  // smooth arc length at each fillet midpoint
  double total_length = 0.0;
};

BuiltPath build_path(double length_m, const std::vector<RouteTurn>& turns, double radius) {
  if (!(length_m >= 50.0)) throw DomainError("track length must be >= 50 m");

  // Unrounded polyline.
  std::vector<Vec2> poly;
  std::vector<double> leg_len;
  std::vector<double> leg_heading;
  std::vector<double> turn_angle;
  poly.push_back(Vec2::Zero());
  double heading = 0.0;
  double used = 0.0;
  for (const RouteTurn& rt : turns) {
    if (!(rt.run_m > 0.0)) throw DomainError("route leg length must be positive");
    const double a = std::abs(rt.turn_rad);
    if (!(a > 1e-9) || !(a < M_PI - 1e-9)) {
      throw DomainError("turn angles must be nonzero and strictly less than pi");
    }
    poly.push_back(poly.back() + rt.run_m * heading_dir(heading));
    leg_len.push_back(rt.run_m);
    leg_heading.push_back(heading);
    turn_angle.push_back(rt.turn_rad);
    heading = heading + rt.turn_rad;
    used += rt.run_m;
  }
  const double last = length_m - used;
  if (!(last > 0.0)) throw DomainError("route legs exceed the track length");
  poly.push_back(poly.back() + last * heading_dir(heading));
  leg_len.push_back(last);
  leg_heading.push_back(heading);

  // Fillet cuts at each corner.
  std::vector<double> cut(turn_angle.size(), 0.0);
  for (std::size_t i = 0; i < turn_angle.size(); ++i) {
    cut[i] = radius * std::tan(std::abs(turn_angle[i]) / 2.0);
  }
  for (std::size_t i = 0; i < leg_len.size(); ++i) {
    const double cut_in = i > 0 ? cut[i - 1] : 0.0;
    const double cut_out = i < cut.size() ? cut[i] : 0.0;
    if (!(leg_len[i] - cut_in - cut_out > 0.0)) {
      throw DomainError("corner fillets overlap: route legs too short for the fillet radius");
    }
  }

  BuiltPath out;
  out.polyline = poly;
  double s = 0.0;
  Vec2 p = Vec2::Zero();
  for (std::size_t i = 0; i < leg_len.size(); ++i) {
    const double cut_in = i > 0 ? cut[i - 1] : 0.0;
    const double cut_out = i < cut.size() ? cut[i] : 0.0;
    const double chi = leg_heading[i];
    PathPiece straight;
    straight.s0 = s;
    straight.length = leg_len[i] - cut_in - cut_out;
    straight.curvature = 0.0;
    straight.start = p;
    straight.heading0 = chi;
    out.pieces.push_back(straight);
    s += straight.length;
    p += straight.length * heading_dir(chi);
    if (i < turn_angle.size()) {
      const double kappa = (turn_angle[i] > 0.0 ? 1.0 : -1.0) / radius;
      PathPiece arc;
      arc.s0 = s;
      arc.length = radius * std::abs(turn_angle[i]);
      arc.curvature = kappa;
      arc.start = p;
      arc.heading0 = chi;
      arc.center = p + (1.0 / kappa) * heading_left(chi);
      out.pieces.push_back(arc);
      out.corner_mid_s.push_back(s + arc.length / 2.0);
      s += arc.length;
      p = arc.center + rotate2(kappa * arc.length, arc.start - arc.center);
    }
  }
  out.total_length = s;
  return out;
}

struct PathPoint {
  Vec2 position;
  double heading;
  double curvature;
};

PathPoint path_point(const std::vector<PathPiece>& pieces, double total_length, double s) {
  s = std::clamp(s, 0.0, total_length);
  auto it = std::upper_bound(pieces.begin(), pieces.end(), s,
                             [](double value, const PathPiece& p) { return value < p.s0; });
  const PathPiece& piece = it == pieces.begin() ? pieces.front() : *(it - 1);
  const double d = s - piece.s0;
  if (piece.curvature == 0.0) {
    return {piece.start + d * heading_dir(piece.heading0), piece.heading0, 0.0};
  }
  const double dchi = piece.curvature * d;
  return {piece.center + rotate2(dchi, piece.start - piece.center), piece.heading0 + dchi,
          piece.curvature};
}

Quat yaw_quat(double heading) {
  return Quat(Eigen::AngleAxisd(heading, Vec3::UnitZ()));
}

/// Camera-from-body mount used throughout: camera x (right) = -body y,
/// camera y (down) = -body z, camera z (forward) = +body x.
Mat3 mount_rotation() {
  Mat3 r;
  r.col(0) = Vec3(0.0, -1.0, 0.0);
  r.col(1) = Vec3(0.0, 0.0, -1.0);
  r.col(2) = Vec3(1.0, 0.0, 0.0);
  return r;
}

/// Invert s(t) by bisection; s is nondecreasing in t.
double time_of_arc_length(const GroundTruth& truth, double s) {
  double lo = 0.0, hi = truth.duration;
  for (int i = 0; i < 80; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (truth.arc_length_at(mid) < s) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

Descriptor base_descriptor(const NoiseConfig& noise, int dim, int landmark_id) {
  Rng rng(mix_seed(noise.master_seed, kStreamDescriptor,
                   static_cast<std::uint64_t>(static_cast<std::uint32_t>(landmark_id))));
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm_sq = 0.0;
  for (double& x : v) {
    x = 0.05 + rng.uniform01();
    norm_sq += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (double& x : v) x *= inv;
  return Descriptor(std::move(v));
}

Descriptor random_descriptor(Rng& rng, int dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  double norm_sq = 0.0;
  for (double& x : v) {
    x = 0.05 + rng.uniform01();
    norm_sq += x * x;
  }
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (double& x : v) x *= inv;
  return Descriptor(std::move(v));
}

Descriptor perturb_descriptor(const Descriptor& base, double sigma, Rng& rng) {
  const std::size_t dim = base.size();
  std::vector<double> v(dim);
  const double per_axis = sigma / std::sqrt(static_cast<double>(dim));
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    v[i] = std::max(0.0, base[i] + per_axis * rng.normal());
    norm_sq += v[i] * v[i];
  }
  if (norm_sq < 1e-24) return base;
  const double inv = 1.0 / std::sqrt(norm_sq);
  for (double& x : v) x *= inv;
  return Descriptor(std::move(v));
}

/// Append the noisy observation of one landmark if it survives the image
/// bounds; returns true when emitted.
void emit_observation(RenderedObservations& out, double u, double v, int landmark_id,
                      const Descriptor& base, const CameraIntrinsics& intrinsics,
                      const NoiseConfig& noise, Rng& rng) {
  const double nu = u + noise.pixel_sigma_px * rng.normal();
  const double nv = v + noise.pixel_sigma_px * rng.normal();
  if (nu < 0.0 || nu >= intrinsics.width_px || nv < 0.0 || nv >= intrinsics.height_px) return;
  out.keypoints.emplace_back(PixelCoord{nu, nv}, 2.0, 0.0);
  out.descriptors.push_back(perturb_descriptor(base, noise.descriptor_sigma, rng));
  out.landmark_ids.push_back(landmark_id);
}

void append_outliers(RenderedObservations& out, std::size_t n_true,
                     const CameraIntrinsics& intrinsics, const NoiseConfig& noise, int dim,
                     Rng& rng) {
  if (noise.outlier_fraction <= 0.0 || n_true == 0) return;
  // Choose the count so outliers are the configured fraction of the emitted
  // keypoints in expectation: n_out = n_true * f / (1 - f), with the
  // fractional part realized as a Bernoulli draw per true observation.
  const double per_true = noise.outlier_fraction / (1.0 - noise.outlier_fraction);
  const double whole = std::floor(per_true);
  const double frac = per_true - whole;
  std::size_t n_out = n_true * static_cast<std::size_t>(whole);
  for (std::size_t i = 0; i < n_true; ++i) {
    if (rng.uniform01() < frac) ++n_out;
  }
  for (std::size_t i = 0; i < n_out; ++i) {
    const double u = rng.uniform(0.0, static_cast<double>(intrinsics.width_px));
    const double v = rng.uniform(0.0, static_cast<double>(intrinsics.height_px));
    out.keypoints.emplace_back(PixelCoord{u, v}, 2.0, 0.0);
    out.descriptors.push_back(random_descriptor(rng, dim));
    out.landmark_ids.push_back(-1);
  }
}

/// Apparent pixel of a landmark in a virtual panorama view: true splat
/// direction in the stored grid, rendered through the mapping extract_view
/// uses (which believes the recorded heading). Returns false when the
/// direction falls outside the view's front hemisphere.
bool view_pixel(const PanoramaRecord& record, double view_heading, double view_pitch,
                const CameraIntrinsics& intrinsics, const Vec3& landmark, double* u, double* v) {
  const SphericalAngle grid = bearing_to_point(record.true_pose, landmark);
  const SphericalAngle center =
      SphericalAngle::wrapped(view_pitch, wrap_pi(view_heading - record.vehicle_heading));
  // Same front-hemisphere test as gnomonic_forward, which throws on failure.
  const double cos_c = std::sin(center.theta) * std::sin(grid.theta) +
                       std::cos(center.theta) * std::cos(grid.theta) *
                           std::cos(grid.phi - center.phi);
  if (!(cos_c > 1e-9)) return false;
  const GnomonicResult g = gnomonic_forward(grid, center);
  *u = intrinsics.cx() + intrinsics.focal_px * g.x;
  *v = intrinsics.cy() - intrinsics.focal_px * g.y;
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// GroundTruth queries

double GroundTruth::arc_length_at(double t) const {
  if (phases.empty()) return 0.0;
  if (t >= duration) return total_length;
  const MotionPhase* p = phase_at(phases, t);
  const double tau = std::clamp(t - p->t0, 0.0, p->duration);
  return p->s0 + p->v0 * tau + 0.5 * p->a0 * tau * tau + p->jerk * tau * tau * tau / 6.0;
}

double GroundTruth::speed_at(double t) const {
  if (phases.empty() || t >= duration) return 0.0;
  const MotionPhase* p = phase_at(phases, t);
  const double tau = std::clamp(t - p->t0, 0.0, p->duration);
  return std::max(0.0, p->v0 + p->a0 * tau + 0.5 * p->jerk * tau * tau);
}

double GroundTruth::accel_at(double t) const {
  if (phases.empty() || t >= duration || t < 0.0) return 0.0;
  const MotionPhase* p = phase_at(phases, t);
  const double tau = std::clamp(t - p->t0, 0.0, p->duration);
  return p->a0 + p->jerk * tau;
}

Vec3 GroundTruth::position_at(double t) const {
  const PathPoint p = path_point(path, total_length, arc_length_at(t));
  return Vec3(p.position.x(), p.position.y(), 0.0);
}

double GroundTruth::heading_at(double t) const {
  return path_point(path, total_length, arc_length_at(t)).heading;
}

double GroundTruth::curvature_at(double t) const {
  return path_point(path, total_length, arc_length_at(t)).curvature;
}

Pose GroundTruth::body_pose_at(double t) const {
  return Pose(yaw_quat(heading_at(t)), position_at(t));
}

Pose GroundTruth::camera_pose_at(double t) const {
  return body_pose_at(t).compose(mount);
}

Trajectory GroundTruth::polyline() const {
  Trajectory out;
  out.points.reserve(vertices.size());
  for (const TimedVertex& v : vertices) {
    out.points.push_back({v.t, v.position.x(), v.position.y()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario configuration

SimConfig standard_scenario() {
  SimConfig cfg;
  cfg.stops = {{500.0, 20.0}};
  return cfg;
}

namespace {

double get_num(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_number()) throw IoError(std::string("scenario key '") + key + "' must be a number");
  return j.at(key).get<double>();
}

Vec3 get_vec3(const nlohmann::json& j, const char* key, const Vec3& fallback) {
  if (!j.contains(key)) return fallback;
  const auto& a = j.at(key);
  if (!a.is_array() || a.size() != 3 || !a[0].is_number() || !a[1].is_number() || !a[2].is_number()) {
    throw IoError(std::string("scenario key '") + key + "' must be a 3-element number array");
  }
  return Vec3(a[0].get<double>(), a[1].get<double>(), a[2].get<double>());
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                const char* where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) throw IoError(std::string("unknown ") + where + " key '" + it.key() + "'");
  }
}

NoiseConfig noise_from_json(const nlohmann::json& j, NoiseConfig n) {
  check_keys(j,
             {"pixel_sigma_px", "descriptor_sigma", "outlier_fraction", "pano_pos_sigma_m",
              "pano_heading_sigma_rad", "accel_noise_density", "gyro_noise_density", "accel_bias",
              "gyro_bias", "gps_sigma_m", "gps_rate_hz", "ar_drift_rad_per_m", "master_seed"},
             "noise");
  n.pixel_sigma_px = get_num(j, "pixel_sigma_px", n.pixel_sigma_px);
  n.descriptor_sigma = get_num(j, "descriptor_sigma", n.descriptor_sigma);
  n.outlier_fraction = get_num(j, "outlier_fraction", n.outlier_fraction);
  n.pano_pos_sigma_m = get_num(j, "pano_pos_sigma_m", n.pano_pos_sigma_m);
  n.pano_heading_sigma_rad = get_num(j, "pano_heading_sigma_rad", n.pano_heading_sigma_rad);
  n.accel_noise_density = get_num(j, "accel_noise_density", n.accel_noise_density);
  n.gyro_noise_density = get_num(j, "gyro_noise_density", n.gyro_noise_density);
  n.accel_bias = get_vec3(j, "accel_bias", n.accel_bias);
  n.gyro_bias = get_vec3(j, "gyro_bias", n.gyro_bias);
  n.gps_sigma_m = get_num(j, "gps_sigma_m", n.gps_sigma_m);
  n.gps_rate_hz = get_num(j, "gps_rate_hz", n.gps_rate_hz);
  n.ar_drift_rad_per_m = get_num(j, "ar_drift_rad_per_m", n.ar_drift_rad_per_m);
  if (j.contains("master_seed")) {
    if (!j.at("master_seed").is_number_unsigned()) {
      throw IoError("noise key 'master_seed' must be a non-negative integer");
    }
    n.master_seed = j.at("master_seed").get<std::uint64_t>();
  }
  return n;
}

}  // namespace

Scenario scenario_from_json_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("scenario JSON parse error: ") + e.what());
  }
  if (!j.is_object()) throw IoError("scenario JSON must be an object");
  check_keys(j,
             {"length_m", "turns", "stops", "seed", "noise", "cruise_speed_mps", "accel_limit_mps2",
              "jerk_ramp_s", "initial_stationary_s", "imu_rate_hz", "ar_rate_hz", "corner_radius_m",
              "pano_spacing_m", "pano_height_m", "camera_height_m", "landmark_spacing_m",
              "facade_offset_left_m", "facade_offset_right_m", "visibility_radius_m",
              "origin_lat_deg", "origin_lon_deg"},
             "scenario");

  Scenario sc;
  sc.config = standard_scenario();
  sc.length_m = get_num(j, "length_m", sc.length_m);
  if (j.contains("turns")) {
    if (!j.at("turns").is_array()) throw IoError("scenario key 'turns' must be an array");
    sc.turns.clear();
    for (const auto& t : j.at("turns")) {
      if (!t.is_object()) throw IoError("each turn must be an object");
      check_keys(t, {"run_m", "turn_deg"}, "turn");
      if (!t.contains("run_m") || !t.contains("turn_deg")) {
        throw IoError("each turn needs 'run_m' and 'turn_deg'");
      }
      sc.turns.push_back({get_num(t, "run_m", 0.0), get_num(t, "turn_deg", 0.0) * M_PI / 180.0});
    }
  }
  if (j.contains("stops")) {
    if (!j.at("stops").is_array()) throw IoError("scenario key 'stops' must be an array");
    sc.config.stops.clear();
    for (const auto& s : j.at("stops")) {
      if (!s.is_object()) throw IoError("each stop must be an object");
      check_keys(s, {"at_s", "duration_s"}, "stop");
      if (!s.contains("at_s") || !s.contains("duration_s")) {
        throw IoError("each stop needs 'at_s' and 'duration_s'");
      }
      sc.config.stops.push_back({get_num(s, "at_s", 0.0), get_num(s, "duration_s", 0.0)});
    }
  }
  if (j.contains("noise")) {
    if (!j.at("noise").is_object()) throw IoError("scenario key 'noise' must be an object");
    sc.config.noise = noise_from_json(j.at("noise"), sc.config.noise);
  }
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw IoError("scenario key 'seed' must be a non-negative integer");
    sc.config.noise.master_seed = j.at("seed").get<std::uint64_t>();
  }
  SimConfig& c = sc.config;
  c.cruise_speed_mps = get_num(j, "cruise_speed_mps", c.cruise_speed_mps);
  c.accel_limit_mps2 = get_num(j, "accel_limit_mps2", c.accel_limit_mps2);
  c.jerk_ramp_s = get_num(j, "jerk_ramp_s", c.jerk_ramp_s);
  c.initial_stationary_s = get_num(j, "initial_stationary_s", c.initial_stationary_s);
  c.imu_rate_hz = get_num(j, "imu_rate_hz", c.imu_rate_hz);
  c.ar_rate_hz = get_num(j, "ar_rate_hz", c.ar_rate_hz);
  c.corner_radius_m = get_num(j, "corner_radius_m", c.corner_radius_m);
  c.pano_spacing_m = get_num(j, "pano_spacing_m", c.pano_spacing_m);
  c.pano_height_m = get_num(j, "pano_height_m", c.pano_height_m);
  c.camera_height_m = get_num(j, "camera_height_m", c.camera_height_m);
  c.landmark_spacing_m = get_num(j, "landmark_spacing_m", c.landmark_spacing_m);
  c.facade_offset_left_m = get_num(j, "facade_offset_left_m", c.facade_offset_left_m);
  c.facade_offset_right_m = get_num(j, "facade_offset_right_m", c.facade_offset_right_m);
  c.visibility_radius_m = get_num(j, "visibility_radius_m", c.visibility_radius_m);
  if (j.contains("origin_lat_deg") || j.contains("origin_lon_deg")) {
    c.origin = LatLon(get_num(j, "origin_lat_deg", c.origin.lat),
                      get_num(j, "origin_lon_deg", c.origin.lon));
  }
  validate_config(sc.config);
  if (!(sc.length_m >= 50.0)) throw DomainError("track length must be >= 50 m");
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open scenario file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return scenario_from_json_text(ss.str());
}

// ---------------------------------------------------------------------------
// World generation

SimWorld generate_world(double length_m, const std::vector<RouteTurn>& turns,
                        const SimConfig& config) {
  validate_config(config);
  const BuiltPath path = build_path(length_m, turns, config.corner_radius_m);
  const LocalFrame frame(config.origin);

  SimWorld world;
  world.truth.path = path.pieces;
  world.truth.total_length = path.total_length;
  world.truth.mount = Pose(mount_rotation(), Vec3(0.0, 0.0, config.camera_height_m));
  world.truth.phases = build_profile(path.total_length, config, config.stops, &world.truth.duration);

  // Unrounded reference polyline, timestamped at departure, closest approach
  // to each corner, and arrival.
  world.truth.vertices.push_back({0.0, Vec3(path.polyline.front().x(), path.polyline.front().y(), 0.0)});
  for (std::size_t i = 0; i + 2 < path.polyline.size(); ++i) {
    const Vec2 corner = path.polyline[i + 1];
    world.truth.vertices.push_back(
        {time_of_arc_length(world.truth, path.corner_mid_s[i]), Vec3(corner.x(), corner.y(), 0.0)});
  }
  world.truth.vertices.push_back(
      {world.truth.duration, Vec3(path.polyline.back().x(), path.polyline.back().y(), 0.0)});

  // Landmarks: one per facade every landmark_spacing_m of road, heights
  // cycling so neighborhoods are never coplanar with the road plane.
  static constexpr double kHeights[] = {0.5, 2.0, 3.5, 5.0};
  world.scene.frame = frame;
  int next_id = 0;
  int station = 0;
  for (double s = config.landmark_spacing_m / 2.0; s < path.total_length;
       s += config.landmark_spacing_m, ++station) {
    const PathPoint p = path_point(path.pieces, path.total_length, s);
    const Vec2 left = heading_left(p.heading);
    const Vec2 lp = p.position + config.facade_offset_left_m * left;
    const Vec2 rp = p.position - config.facade_offset_right_m * left;
    world.scene.landmarks.push_back(
        {next_id++, Vec3(lp.x(), lp.y(), kHeights[station % 4])});
    world.scene.landmarks.push_back(
        {next_id++, Vec3(rp.x(), rp.y(), kHeights[(station + 2) % 4])});
  }

  // Panoramas every pano_spacing_m, offset half a spacing so none coincides
  // with the start of the drive.
  std::vector<PanoramaRecord> records;
  int pano_index = 0;
  for (double s = config.pano_spacing_m / 2.0; s < path.total_length;
       s += config.pano_spacing_m, ++pano_index) {
    const PathPoint p = path_point(path.pieces, path.total_length, s);
    const double heading_cw_north = wrap_pi(M_PI / 2.0 - p.heading);
    const Vec3 center(p.position.x(), p.position.y(), config.pano_height_m);

    Rng rng(mix_seed(config.noise.master_seed, kStreamPano,
                     static_cast<std::uint64_t>(pano_index)));
    const double east = center.x() + config.noise.pano_pos_sigma_m * rng.normal();
    const double north = center.y() + config.noise.pano_pos_sigma_m * rng.normal();
    const double rec_heading =
        wrap_pi(heading_cw_north + config.noise.pano_heading_sigma_rad * rng.normal());

    PanoramaRecord rec;
    char idbuf[16];
    std::snprintf(idbuf, sizeof idbuf, "pano_%04d", pano_index);
    rec.id = idbuf;
    rec.location = frame.to_latlon(east, north);
    rec.vehicle_heading = rec_heading;
    rec.height = config.pano_height_m;
    rec.true_pose = Pose(camera_rotation_enu(heading_cw_north, 0.0), center);

    std::vector<AngularSplatField::Splat> splats;
    for (const SceneLandmark& lm : world.scene.landmarks) {
      const double dist = (lm.position - center).norm();
      if (dist < 1e-9 || dist > config.visibility_radius_m) continue;
      const SphericalAngle a = bearing_to_point(rec.true_pose, lm.position);
      splats.push_back({a.phi, a.theta, landmark_amplitude(lm.id)});
    }
    const double sigma_rad = 3.0 * 2.0 * M_PI / config.pano_width_px;
    rec.equirect = std::make_shared<AngularSplatField>(std::move(splats), sigma_rad,
                                                       config.pano_width_px, config.pano_height_px);
    records.push_back(std::move(rec));
  }
  world.panos = build_database(std::move(records), frame);
  return world;
}

// ---------------------------------------------------------------------------
// Observation rendering

RenderedObservations render_observations(const Scene& scene, const Pose& camera_pose,
                                         const CameraIntrinsics& intrinsics,
                                         const SimConfig& config, std::uint64_t seed) {
  validate_noise(config.noise);
  RenderedObservations out;
  Rng rng(mix_seed(config.noise.master_seed, kStreamObservations, seed));
  const Vec3 center = camera_pose.translation();
  std::size_t n_true = 0;
  for (const SceneLandmark& lm : scene.landmarks) {
    if ((lm.position - center).norm() > config.visibility_radius_m) continue;
    PixelCoord px;
    try {
      px = project_point(intrinsics, camera_pose, lm.position);
    } catch (const CheiralityError&) {
      continue;
    }
    const std::size_t before = out.keypoints.size();
    emit_observation(out, px.x, px.y, lm.id,
                     base_descriptor(config.noise, config.descriptor_dim, lm.id), intrinsics,
                     config.noise, rng);
    n_true += out.keypoints.size() - before;
  }
  append_outliers(out, n_true, intrinsics, config.noise, config.descriptor_dim, rng);
  return out;
}

RenderedObservations render_view_observations(const Scene& scene, const PanoramaRecord& record,
                                              double view_heading, double view_pitch,
                                              const CameraIntrinsics& intrinsics,
                                              const SimConfig& config, std::uint64_t seed) {
  validate_noise(config.noise);
  RenderedObservations out;
  Rng rng(mix_seed(config.noise.master_seed, kStreamObservations, mix_seed(seed, 0x76696577ULL)));
  const Vec3 center = record.true_pose.translation();
  std::size_t n_true = 0;
  for (const SceneLandmark& lm : scene.landmarks) {
    const double dist = (lm.position - center).norm();
    if (dist < 1e-9 || dist > config.visibility_radius_m) continue;
    double u = 0.0, v = 0.0;
    if (!view_pixel(record, view_heading, view_pitch, intrinsics, lm.position, &u, &v)) continue;
    const std::size_t before = out.keypoints.size();
    emit_observation(out, u, v, lm.id,
                     base_descriptor(config.noise, config.descriptor_dim, lm.id), intrinsics,
                     config.noise, rng);
    n_true += out.keypoints.size() - before;
  }
  append_outliers(out, n_true, intrinsics, config.noise, config.descriptor_dim, rng);
  return out;
}

double AnalyticImage::value(double x, double y) const {
  const double inv_two_sigma_sq = 1.0 / (2.0 * sigma_px * sigma_px);
  double sum = 0.0;
  for (const ImageSplat& s : splats) {
    const double dx = x - s.u, dy = y - s.v;
    sum += s.amplitude * std::exp(-(dx * dx + dy * dy) * inv_two_sigma_sq);
  }
  return sum;
}

Vec2 AnalyticImage::gradient(double x, double y) const {
  const double inv_sigma_sq = 1.0 / (sigma_px * sigma_px);
  Vec2 g = Vec2::Zero();
  for (const ImageSplat& s : splats) {
    const double dx = x - s.u, dy = y - s.v;
    const double w = s.amplitude * std::exp(-0.5 * (dx * dx + dy * dy) * inv_sigma_sq);
    g.x() += -dx * inv_sigma_sq * w;
    g.y() += -dy * inv_sigma_sq * w;
  }
  return g;
}

GradientField AnalyticImage::field() const {
  auto copy = std::make_shared<const AnalyticImage>(*this);
  GradientField f;
  f.gradient = [copy](double x, double y) { return copy->gradient(x, y); };
  f.width = width;
  f.height = height;
  return f;
}

AnalyticImage render_gradient_image(const Scene& scene, const Pose& camera_pose,
                                    const CameraIntrinsics& intrinsics, const SimConfig& config) {
  AnalyticImage img;
  img.width = intrinsics.width_px;
  img.height = intrinsics.height_px;
  const Vec3 center = camera_pose.translation();
  for (const SceneLandmark& lm : scene.landmarks) {
    if ((lm.position - center).norm() > config.visibility_radius_m) continue;
    try {
      const PixelCoord px = project_point(intrinsics, camera_pose, lm.position);
      img.splats.push_back({px.x, px.y, landmark_amplitude(lm.id)});
    } catch (const CheiralityError&) {
    }
  }
  return img;
}

GradientField render_gradient_field(const Scene& scene, const Pose& camera_pose,
                                    const CameraIntrinsics& intrinsics, const SimConfig& config) {
  return render_gradient_image(scene, camera_pose, intrinsics, config).field();
}

AnalyticImage render_view_gradient_image(const Scene& scene, const PanoramaRecord& record,
                                         double view_heading, double view_pitch,
                                         const CameraIntrinsics& intrinsics,
                                         const SimConfig& config) {
  AnalyticImage img;
  img.width = intrinsics.width_px;
  img.height = intrinsics.height_px;
  const Vec3 center = record.true_pose.translation();
  for (const SceneLandmark& lm : scene.landmarks) {
    const double dist = (lm.position - center).norm();
    if (dist < 1e-9 || dist > config.visibility_radius_m) continue;
    double u = 0.0, v = 0.0;
    if (!view_pixel(record, view_heading, view_pitch, intrinsics, lm.position, &u, &v)) continue;
    if (u < -3.0 * img.sigma_px || u > intrinsics.width_px + 3.0 * img.sigma_px ||
        v < -3.0 * img.sigma_px || v > intrinsics.height_px + 3.0 * img.sigma_px) {
      continue;
    }
    img.splats.push_back({u, v, landmark_amplitude(lm.id)});
  }
  return img;
}

// ---------------------------------------------------------------------------
// Sensor synthesis

std::vector<ImuSample> synthesize_imu(const GroundTruth& truth, const SimConfig& config,
                                      std::uint64_t seed) {
  validate_config(config);
  Rng rng(mix_seed(config.noise.master_seed, kStreamImu, seed));
  const double dt = 1.0 / config.imu_rate_hz;
  const double accel_sigma = config.noise.accel_noise_density * std::sqrt(config.imu_rate_hz);
  const double gyro_sigma = config.noise.gyro_noise_density * std::sqrt(config.imu_rate_hz);
  const std::size_t n = static_cast<std::size_t>(std::floor(truth.duration / dt + 1e-9)) + 1;

  std::vector<ImuSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const double v = truth.speed_at(t);
    const double a_tan = truth.accel_at(t);
    const double kappa = truth.curvature_at(t);
    // Level body, x forward / y left / z up: specific force is the kinematic
    // acceleration (tangential, centripetal) plus the upward gravity
    // reaction; angular rate is the yaw rate v * kappa.
    ImuSample s;
    s.t = t;
    s.accel = Vec3(a_tan, v * v * kappa, kStandardGravity) + config.noise.accel_bias;
    s.gyro = Vec3(0.0, 0.0, v * kappa) + config.noise.gyro_bias;
    if (accel_sigma > 0.0) {
      s.accel += accel_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
    }
    if (gyro_sigma > 0.0) {
      s.gyro += gyro_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<GpsFix> synthesize_gps(const GroundTruth& truth, const LocalFrame& frame,
                                   const SimConfig& config, std::uint64_t seed) {
  validate_config(config);
  Rng rng(mix_seed(config.noise.master_seed, kStreamGps, seed));
  const double dt = 1.0 / config.noise.gps_rate_hz;
  const std::size_t n = static_cast<std::size_t>(std::floor(truth.duration / dt + 1e-9)) + 1;
  std::vector<GpsFix> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const Vec3 p = truth.position_at(t);
    const double east = p.x() + config.noise.gps_sigma_m * rng.normal();
    const double north = p.y() + config.noise.gps_sigma_m * rng.normal();
    out.push_back({t, frame.to_latlon(east, north), std::max(config.noise.gps_sigma_m, 1e-3)});
  }
  return out;
}

std::vector<ArPose> synthesize_ar(const GroundTruth& truth, const SimConfig& config,
                                  std::uint64_t seed) {
  validate_config(config);
  (void)seed;  // the drift model is deterministic; kept for interface symmetry
  const double dt = 1.0 / config.ar_rate_hz;
  const double drift_rate = config.noise.ar_drift_rad_per_m;
  const std::size_t n = static_cast<std::size_t>(std::floor(truth.duration / dt + 1e-9)) + 1;

  std::vector<ArPose> out;
  out.reserve(n);
  Vec3 position = Vec3::Zero();
  Vec3 prev_true = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) * dt;
    const Pose cam = truth.camera_pose_at(t);
    const double yaw_drift = drift_rate * truth.arc_length_at(t);
    if (i == 0) {
      position = cam.translation();
    } else {
      // Rotate each true increment by the accumulated yaw drift: lengths are
      // preserved exactly (locally metric) while the absolute track bends.
      position += yaw_quat(yaw_drift) * (cam.translation() - prev_true);
    }
    prev_true = cam.translation();
    ArPose ap;
    ap.t = t;
    ap.position = position;
    ap.rotation = (yaw_quat(yaw_drift) * cam.rotation()).normalized();
    ap.tracked = true;
    out.push_back(ap);
  }
  return out;
}

}  // namespace svloc
