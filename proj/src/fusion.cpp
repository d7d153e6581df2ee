#include "svloc/fusion.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <Eigen/Dense>

#include "csv_internal.hpp"
#include "svloc/error.hpp"

namespace svloc {

namespace {

void require_finite(const Vec3& v, const char* what) {
  if (!v.allFinite()) throw DomainError(std::string(what) + " must be finite");
}

Mat3 skew3(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),  //
      v.z(), 0.0, -v.x(),   //
      -v.y(), v.x(), 0.0;
  return m;
}

/// Indices of the 7-dim error state [attitude(3), pos_n, pos_e, v_n, v_e].
constexpr int kPosN = 3;
constexpr int kPosE = 4;
constexpr int kVelN = 5;
constexpr int kVelE = 6;

/// Horizontal acceleration in the navigation frame for one increment,
/// rotated through the midpoint attitude, gravity removed.
Vec3 nav_acceleration(const EkfState& state, const ImuIncrement& inc, double gravity) {
  const Quat q_mid = state.q * quat_exp(Vec3(0.5 * inc.delta_theta));
  const Vec3 f_nav = q_mid * (inc.delta_v / inc.dt);
  return f_nav + Vec3(0.0, 0.0, -gravity);
}

void validate_increment(const ImuIncrement& inc) {
  if (!(inc.dt > 0.0)) throw DomainError("IMU increment dt must be positive");
  require_finite(inc.delta_theta, "IMU increment delta_theta");
  require_finite(inc.delta_v, "IMU increment delta_v");
}

}  // namespace

ImuIncrement integrate_increment(const ImuSample& s0, const ImuSample& s1,
                                 const Vec3& gyro_bias, const Vec3& accel_bias) {
  if (!(s1.t > s0.t)) {
    throw StreamOrderError("IMU timestamps must strictly increase (" + std::to_string(s0.t) +
                           " -> " + std::to_string(s1.t) + ")");
  }
  require_finite(s0.accel, "IMU accel");
  require_finite(s1.accel, "IMU accel");
  require_finite(s0.gyro, "IMU gyro");
  require_finite(s1.gyro, "IMU gyro");
  ImuIncrement inc;
  inc.dt = s1.t - s0.t;
  inc.delta_theta = 0.5 * (s0.gyro + s1.gyro) * inc.dt - gyro_bias * inc.dt;
  inc.delta_v = 0.5 * (s0.accel + s1.accel) * inc.dt - accel_bias * inc.dt;
  return inc;
}

EkfState strapdown_predict(const EkfState& state, const ImuIncrement& inc, double gravity) {
  validate_increment(inc);
  const double dt = inc.dt;
  const Vec3 a = nav_acceleration(state, inc, gravity);
  const double a_n = a.y();
  const double a_e = a.x();

  EkfState out = state;
  out.q = (state.q * quat_exp(inc.delta_theta)).normalized();
  out.pos_n = state.pos_n + state.v_n * dt + 0.5 * a_n * dt * dt;
  out.pos_e = state.pos_e + state.v_e * dt + 0.5 * a_e * dt * dt;
  out.v_n = state.v_n + a_n * dt;
  out.v_e = state.v_e + a_e * dt;
  return out;
}

EkfCovariance strapdown_jacobian(const EkfState& state, const ImuIncrement& inc) {
  validate_increment(inc);
  const double dt = inc.dt;
  EkfCovariance F = EkfCovariance::Identity();

  // Attitude error is a body-frame right perturbation: it propagates through
  // the increment by the adjoint of the increment rotation.
  F.block<3, 3>(0, 0) = quat_exp(inc.delta_theta).toRotationMatrix().transpose();

  // An attitude error tilts the rotated velocity increment:
  // d(R(q Exp(dth)) w)/d(dth) = -R [w]x with w the midpoint-rotated delta_v.
  const Vec3 w = quat_exp(Vec3(0.5 * inc.delta_theta)) * inc.delta_v;
  const Mat3 dv_dtheta = -(state.q.toRotationMatrix() * skew3(w));
  F.block<1, 3>(kVelN, 0) = dv_dtheta.row(1);  // navigation y = north
  F.block<1, 3>(kVelE, 0) = dv_dtheta.row(0);  // navigation x = east
  F.block<1, 3>(kPosN, 0) = 0.5 * dt * dv_dtheta.row(1);
  F.block<1, 3>(kPosE, 0) = 0.5 * dt * dv_dtheta.row(0);

  F(kPosN, kVelN) = dt;
  F(kPosE, kVelE) = dt;
  return F;
}

EkfState ekf_predict(const EkfState& state, const ImuIncrement& inc,
                     const EkfCovariance& process_noise, double gravity) {
  const double scale = std::max(1.0, process_noise.cwiseAbs().maxCoeff());
  if ((process_noise - process_noise.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale ||
      process_noise.diagonal().minCoeff() < 0.0) {
    throw DomainError("process noise must be symmetric with a non-negative diagonal");
  }
  EkfState out = strapdown_predict(state, inc, gravity);
  const EkfCovariance F = strapdown_jacobian(state, inc);
  const EkfCovariance P = F * state.covariance * F.transpose() + process_noise;
  out.covariance = 0.5 * (P + P.transpose());
  return out;
}

EkfUpdateResult ekf_update(const EkfState& state, const GpsFix& fix, const LocalFrame& frame,
                           double chi2_gate) {
  if (!(fix.sigma_m > 0.0)) throw DomainError("GPS fix sigma must be positive");
  if (!(chi2_gate > 0.0)) throw DomainError("chi-squared gate must be positive");

  const Vec2 east_north = frame.to_local(fix.position);
  const Vec2 innovation(east_north.y() - state.pos_n, east_north.x() - state.pos_e);

  const double r = fix.sigma_m * fix.sigma_m;
  const Eigen::Matrix2d S =
      state.covariance.block<2, 2>(kPosN, kPosN) + r * Eigen::Matrix2d::Identity();
  const Eigen::Matrix2d S_inv = S.inverse();
  EkfUpdateResult result;
  result.mahalanobis_sq = innovation.dot(S_inv * innovation);
  if (result.mahalanobis_sq > chi2_gate) {
    result.state = state;
    result.accepted = false;
    return result;
  }

  const Eigen::Matrix<double, 7, 2> K = state.covariance.block<7, 2>(0, kPosN) * S_inv;
  const Eigen::Matrix<double, 7, 1> dx = K * innovation;

  EkfState out = state;
  out.q = (state.q * quat_exp(dx.head<3>())).normalized();
  out.pos_n += dx(kPosN);
  out.pos_e += dx(kPosE);
  out.v_n += dx(kVelN);
  out.v_e += dx(kVelE);

  // Joseph form: valid for any gain, preserves symmetry and positivity.
  EkfCovariance A = EkfCovariance::Identity();
  A.block<7, 2>(0, kPosN) -= K;
  const EkfCovariance P =
      A * state.covariance * A.transpose() + r * (K * K.transpose());
  out.covariance = 0.5 * (P + P.transpose());

  result.state = out;
  result.accepted = true;
  return result;
}

Trajectory dead_reckon(const std::vector<ImuSample>& imu, const EkfState& init,
                       double gravity) {
  Trajectory out;
  if (imu.empty()) {
    out.points.push_back({0.0, init.pos_e, init.pos_n});
    return out;
  }
  EkfState state = init;
  out.points.push_back({imu.front().t, state.pos_e, state.pos_n});
  for (std::size_t i = 1; i < imu.size(); ++i) {
    const ImuIncrement inc =
        integrate_increment(imu[i - 1], imu[i], state.gyro_bias, state.accel_bias);
    state = strapdown_predict(state, inc, gravity);
    out.points.push_back({imu[i].t, state.pos_e, state.pos_n});
  }
  return out;
}

ImuCalibration calibrate_stationary(const std::vector<ImuSample>& imu, int n_samples,
                                    double gravity) {
  if (n_samples < 1 || n_samples > static_cast<int>(imu.size())) {
    throw DomainError("stationary calibration needs 1 <= n_samples <= stream size, got " +
                      std::to_string(n_samples) + " of " + std::to_string(imu.size()));
  }
  Vec3 gyro_sum = Vec3::Zero();
  Vec3 accel_sum = Vec3::Zero();
  for (int i = 0; i < n_samples; ++i) {
    gyro_sum += imu[static_cast<std::size_t>(i)].gyro;
    accel_sum += imu[static_cast<std::size_t>(i)].accel;
  }
  ImuCalibration cal;
  cal.gyro_bias = gyro_sum / static_cast<double>(n_samples);
  // A level stationary body measures the gravity reaction (0, 0, +g).
  cal.accel_bias = accel_sum / static_cast<double>(n_samples) - Vec3(0.0, 0.0, gravity);
  return cal;
}

std::optional<double> heading_from_fixes(const std::vector<GpsFix>& gps,
                                         const LocalFrame& frame,
                                         double min_displacement_m) {
  if (gps.size() < 2) return std::nullopt;
  const Vec2 first = frame.to_local(gps.front().position);
  for (std::size_t i = 1; i < gps.size(); ++i) {
    const Vec2 d = frame.to_local(gps[i].position) - first;
    if (d.norm() >= min_displacement_m) return std::atan2(d.y(), d.x());
  }
  return std::nullopt;
}

EkfCovariance process_noise(const FuseConfig& config, double dt) {
  if (!(dt > 0.0)) throw DomainError("process noise requires dt > 0");
  EkfCovariance Q = EkfCovariance::Zero();
  const double qa = config.sigma_gyro * config.sigma_gyro * dt;
  const double qp = config.sigma_pos_process * config.sigma_pos_process * dt;
  const double qv = config.sigma_accel * config.sigma_accel * dt;
  Q.diagonal() << qa, qa, qa, qp, qp, qv, qv;
  return Q;
}

Trajectory fuse(const std::vector<ImuSample>& imu, const std::vector<GpsFix>& gps,
                const EkfState& init, const LocalFrame& frame, const FuseConfig& config,
                FuseStats* stats) {
  for (std::size_t i = 1; i < gps.size(); ++i) {
    if (!(gps[i].t > gps[i - 1].t)) {
      throw StreamOrderError("GPS timestamps must strictly increase");
    }
  }

  EkfState state = init;
  if (config.calibration_samples > 0) {
    const ImuCalibration cal =
        calibrate_stationary(imu, config.calibration_samples, config.gravity);
    state.gyro_bias = cal.gyro_bias;
    state.accel_bias = cal.accel_bias;
  }
  if (state.covariance.isZero(0.0)) {
    EkfCovariance P0 = EkfCovariance::Zero();
    const double st = config.init_sigma_tilt_rad * config.init_sigma_tilt_rad;
    const double sy = config.init_sigma_yaw_rad * config.init_sigma_yaw_rad;
    const double sp = config.init_sigma_pos_m * config.init_sigma_pos_m;
    const double sv = config.init_sigma_vel_mps * config.init_sigma_vel_mps;
    // Body-frame attitude error: for a near-level body, x/y are roll/pitch
    // and z is yaw.
    P0.diagonal() << st, st, sy, sp, sp, sv, sv;
    state.covariance = P0;
  }
  if (config.init_from_gps && !gps.empty()) {
    const Vec2 east_north = frame.to_local(gps.front().position);
    state.pos_e = east_north.x();
    state.pos_n = east_north.y();
    const std::optional<double> heading =
        heading_from_fixes(gps, frame, config.heading_align_min_displacement_m);
    if (heading) {
      // Replace yaw, preserving roll and pitch.
      const Vec3 forward = state.q * Vec3::UnitX();
      const double current = std::atan2(forward.y(), forward.x());
      state.q = (quat_exp(Vec3(0.0, 0.0, *heading - current)) * state.q).normalized();
    }
  }

  FuseStats local_stats;
  const auto apply_fix = [&](const GpsFix& fix) {
    const EkfUpdateResult r = ekf_update(state, fix, frame, config.chi2_gate);
    state = r.state;
    if (r.accepted) {
      ++local_stats.fixes_applied;
    } else {
      ++local_stats.fixes_rejected;
    }
  };

  Trajectory out;
  std::size_t gi = 0;
  if (!imu.empty()) {
    while (gi < gps.size() && gps[gi].t <= imu.front().t) apply_fix(gps[gi++]);
    out.points.push_back({imu.front().t, state.pos_e, state.pos_n});
    for (std::size_t i = 1; i < imu.size(); ++i) {
      const ImuIncrement inc =
          integrate_increment(imu[i - 1], imu[i], state.gyro_bias, state.accel_bias);
      state = ekf_predict(state, inc, process_noise(config, inc.dt), config.gravity);
      while (gi < gps.size() && gps[gi].t <= imu[i].t) apply_fix(gps[gi++]);
      out.points.push_back({imu[i].t, state.pos_e, state.pos_n});
    }
  } else {
    out.points.push_back({0.0, state.pos_e, state.pos_n});
  }
  if (stats != nullptr) *stats = local_stats;
  return out;
}

std::vector<ImuSample> read_imu_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<ImuSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line.rfind("t,", 0) != 0)
        throw IoError(path + ":1: expected header starting with 't,'");
      continue;
    }
    const std::vector<double> v = detail::parse_numeric_line(line, 7, path, line_no);
    ImuSample s;
    s.t = v[0];
    s.accel = Vec3(v[1], v[2], v[3]);
    s.gyro = Vec3(v[4], v[5], v[6]);
    if (v.size() >= 10) s.mag = Vec3(v[7], v[8], v[9]);
    if (!std::isfinite(s.t) || !s.accel.allFinite() || !s.gyro.allFinite()) {
      throw IoError(path + ":" + std::to_string(line_no) + ": non-finite IMU sample");
    }
    if (!out.empty() && !(s.t > out.back().t)) {
      throw StreamOrderError(path + ":" + std::to_string(line_no) +
                             ": IMU timestamps must strictly increase");
    }
    out.push_back(s);
  }
  return out;
}

void write_imu_csv(const std::string& path, const std::vector<ImuSample>& imu) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open for writing: " + path);
  bool any_mag = false;
  for (const ImuSample& s : imu) any_mag = any_mag || s.mag.has_value();
  std::fputs(any_mag ? "t,ax,ay,az,gx,gy,gz,mx,my,mz\n" : "t,ax,ay,az,gx,gy,gz\n", f);
  for (const ImuSample& s : imu) {
    std::fprintf(f, "%.6f,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", s.t, s.accel.x(), s.accel.y(),
                 s.accel.z(), s.gyro.x(), s.gyro.y(), s.gyro.z());
    if (any_mag) {
      const Vec3 m = s.mag.value_or(Vec3::Zero());
      std::fprintf(f, ",%.9g,%.9g,%.9g", m.x(), m.y(), m.z());
    }
    std::fputc('\n', f);
  }
  std::fclose(f);
}

std::vector<GpsFix> read_gps_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<GpsFix> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line.rfind("t,", 0) != 0)
        throw IoError(path + ":1: expected header starting with 't,'");
      continue;
    }
    const std::vector<double> v = detail::parse_numeric_line(line, 4, path, line_no);
    GpsFix fix;
    fix.t = v[0];
    try {
      fix.position = LatLon(v[1], v[2]);
    } catch (const DomainError& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    fix.sigma_m = v[3];
    if (!std::isfinite(fix.t) || !(fix.sigma_m > 0.0)) {
      throw IoError(path + ":" + std::to_string(line_no) + ": invalid GPS fix");
    }
    if (!out.empty() && !(fix.t > out.back().t)) {
      throw StreamOrderError(path + ":" + std::to_string(line_no) +
                             ": GPS timestamps must strictly increase");
    }
    out.push_back(fix);
  }
  return out;
}

void write_gps_csv(const std::string& path, const std::vector<GpsFix>& gps) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open for writing: " + path);
  std::fputs("t,lat,lon,sigma_m\n", f);
  for (const GpsFix& fix : gps) {
    std::fprintf(f, "%.6f,%.9f,%.9f,%.4f\n", fix.t, fix.position.lat, fix.position.lon,
                 fix.sigma_m);
  }
  std::fclose(f);
}

}  // namespace svloc
