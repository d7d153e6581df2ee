#pragma once

/// Strapdown inertial navigation and an error-state extended Kalman filter
/// fusing high-rate IMU data with low-rate GPS position fixes.
///
/// Frames: the navigation frame is the local tangent plane of a LocalFrame
/// origin with axes east/north/up; the body frame is x forward, y left,
/// z up. Only horizontal (north, east) position and velocity are estimated.
/// The printed filter state is the usual 8 elements (unit quaternion plus
/// horizontal position and velocity); its uncertainty is carried as a 7x7
/// error-state covariance ordered [attitude error (3, body frame), pos_n,
/// pos_e, v_n, v_e], which avoids the quaternion-norm rank deficiency.
/// Gyro and accelerometer biases are calibration constants subtracted
/// during increment integration, not filter states.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "svloc/geo.hpp"
#include "svloc/trajectory.hpp"

namespace svloc {

inline constexpr double kStandardGravity = 9.80665;  // m/s^2

/// 99.9% quantile of the chi-squared distribution with 2 degrees of freedom;
/// default innovation gate for the 2-D position measurement.
inline constexpr double kChi2Gate2Dof999 = 13.815510557964274;

/// One IMU sample: specific force (including the gravity reaction) and
/// angular rate in the body frame. The magnetometer columns are accepted in
/// input files but unused.
struct ImuSample {
  double t = 0.0;               // seconds
  Vec3 accel = Vec3::Zero();    // m/s^2, body frame
  Vec3 gyro = Vec3::Zero();     // rad/s, body frame
  std::optional<Vec3> mag;      // accepted, never used
};

/// One GPS position fix with an isotropic horizontal standard deviation.
struct GpsFix {
  double t = 0.0;
  LatLon position;
  double sigma_m = 1.0;  // > 0
};

/// Bias-corrected trapezoidal IMU increment over one sampling interval.
struct ImuIncrement {
  Vec3 delta_theta = Vec3::Zero();  // rad
  Vec3 delta_v = Vec3::Zero();      // m/s
  double dt = 0.0;                  // seconds, > 0
};

using EkfCovariance = Eigen::Matrix<double, 7, 7>;

/// Navigation filter state. `q` rotates body vectors into the east/north/up
/// navigation frame; positions and velocities are horizontal components.
struct EkfState {
  Quat q = Quat::Identity();
  double pos_n = 0.0;  // meters north of the local-frame origin
  double pos_e = 0.0;  // meters east of the local-frame origin
  double v_n = 0.0;    // m/s
  double v_e = 0.0;    // m/s
  EkfCovariance covariance = EkfCovariance::Zero();
  Vec3 gyro_bias = Vec3::Zero();   // rad/s, subtracted from increments
  Vec3 accel_bias = Vec3::Zero();  // m/s^2, subtracted from increments
};

/// Trapezoidal integration of two consecutive samples into a bias-corrected
/// increment. Throws StreamOrderError unless s1.t > s0.t.
ImuIncrement integrate_increment(const ImuSample& s0, const ImuSample& s1,
                                 const Vec3& gyro_bias = Vec3::Zero(),
                                 const Vec3& accel_bias = Vec3::Zero());

/// Strapdown mechanization of one increment: attitude advances by the gyro
/// increment, the velocity increment is rotated through the midpoint
/// attitude, gravity is removed, and horizontal position/velocity integrate
/// with the constant-acceleration kinematic model. The quaternion is
/// renormalized. Covariance and biases pass through unchanged.
EkfState strapdown_predict(const EkfState& state, const ImuIncrement& inc,
                           double gravity = kStandardGravity);

/// Jacobian of strapdown_predict's mean map with respect to the 7-dim error
/// state (right-multiplied body-frame attitude error).
EkfCovariance strapdown_jacobian(const EkfState& state, const ImuIncrement& inc);

/// EKF time update: mean via strapdown_predict, covariance via
/// F P F^T + Q, then symmetrized. Q must be symmetric with a non-negative
/// diagonal.
EkfState ekf_predict(const EkfState& state, const ImuIncrement& inc,
                     const EkfCovariance& process_noise,
                     double gravity = kStandardGravity);

struct EkfUpdateResult {
  EkfState state;
  bool accepted = false;
  double mahalanobis_sq = 0.0;  // innovation x^T S^-1 x, 2 dof
};

/// EKF measurement update with a horizontal position fix. The innovation is
/// gated on its Mahalanobis distance (chi-squared, 2 dof); a rejected fix
/// leaves the state untouched and is reported through `accepted`. The
/// covariance update uses the Joseph form.
EkfUpdateResult ekf_update(const EkfState& state, const GpsFix& fix,
                           const LocalFrame& frame,
                           double chi2_gate = kChi2Gate2Dof999);

/// Pure INS dead reckoning: one trajectory point per IMU sample (the first
/// sample carries the initial state). An empty stream yields the initial
/// position stamped t = 0.
Trajectory dead_reckon(const std::vector<ImuSample>& imu, const EkfState& init,
                       double gravity = kStandardGravity);

struct ImuCalibration {
  Vec3 gyro_bias = Vec3::Zero();
  Vec3 accel_bias = Vec3::Zero();
};

/// Stationary bias calibration: averages the first `n_samples` samples of a
/// level, motionless stretch. The accelerometer bias is the mean specific
/// force minus the expected (0, 0, +gravity) reaction.
ImuCalibration calibrate_stationary(const std::vector<ImuSample>& imu, int n_samples,
                                    double gravity = kStandardGravity);

/// Heading (rotation of body-x into the east/north plane, radians measured
/// anticlockwise from east) from the displacement between the first fix and
/// the first later fix at least `min_displacement_m` away; nullopt when no
/// such pair exists.
std::optional<double> heading_from_fixes(const std::vector<GpsFix>& gps,
                                         const LocalFrame& frame,
                                         double min_displacement_m);

struct FuseConfig {
  double gravity = kStandardGravity;

  // Continuous-time noise densities, converted to per-step covariance as
  // sigma^2 * dt on the matching diagonal block. Defaults match the
  // consumer-MEMS magnitudes of the synthetic sensor model.
  double sigma_gyro = 2e-4;    // rad/s/sqrt(Hz), attitude random walk
  double sigma_accel = 2e-3;   // m/s^2/sqrt(Hz), velocity random walk
  double sigma_pos_process = 1e-3;  // m/sqrt(s), residual position noise

  // Initial-uncertainty seeds, applied when the caller's covariance is zero.
  // Tilt (roll/pitch) is tight because a stationary accelerometer levels the
  // platform to ~bias/g radians; yaw is loose because it comes from a coarse
  // GPS course (or nothing at all) and is only observable under acceleration.
  double init_sigma_tilt_rad = 5e-3;
  double init_sigma_yaw_rad = 0.5;
  double init_sigma_pos_m = 5.0;
  double init_sigma_vel_mps = 1.0;

  double chi2_gate = kChi2Gate2Dof999;

  // When true and fixes exist, the initial position snaps to the first fix
  // and the heading aligns to the first adequately separated fix pair.
  bool init_from_gps = true;
  double heading_align_min_displacement_m = 30.0;

  // > 0: estimate biases from this many leading stationary samples.
  int calibration_samples = 0;
};

/// Per-step process noise for the 7-dim error state.
EkfCovariance process_noise(const FuseConfig& config, double dt);

struct FuseStats {
  int fixes_applied = 0;
  int fixes_rejected = 0;
};

/// Full INS/GPS fusion: predict on every IMU increment, update on every fix
/// whose timestamp has been reached, one trajectory point per IMU sample.
/// Fixes after the final IMU sample are ignored.
Trajectory fuse(const std::vector<ImuSample>& imu, const std::vector<GpsFix>& gps,
                const EkfState& init, const LocalFrame& frame,
                const FuseConfig& config = {}, FuseStats* stats = nullptr);

/// CSV `t,ax,ay,az,gx,gy,gz[,mx,my,mz]` with header; throws IoError on
/// malformed input and StreamOrderError on non-increasing timestamps.
std::vector<ImuSample> read_imu_csv(const std::string& path);
void write_imu_csv(const std::string& path, const std::vector<ImuSample>& imu);

/// CSV `t,lat,lon,sigma_m` with header. Fused trajectories are written with
/// write_trajectory_csv, which already emits `t,east,north,lat,lon`.
std::vector<GpsFix> read_gps_csv(const std::string& path);
void write_gps_csv(const std::string& path, const std::vector<GpsFix>& gps);

}  // namespace svloc
