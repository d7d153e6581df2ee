#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "svloc/error.hpp"

namespace svloc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

inline constexpr double kPi = 3.141592653589793238462643383279502884;

/// Wrap an angle to (-pi, pi].
double wrap_pi(double a);

/// Geographic coordinate. Degrees; lat in [-90, 90], lon in [-180, 180).
struct LatLon {
  double lat = 0.0;
  double lon = 0.0;

  LatLon() = default;
  LatLon(double lat_deg, double lon_deg);
};

/// WGS-84 ellipsoid constants and principal radii of curvature.
namespace wgs84 {
inline constexpr double kSemiMajorAxis = 6378137.0;
inline constexpr double kFlattening = 1.0 / 298.257223563;
inline constexpr double kEccentricitySq = kFlattening * (2.0 - kFlattening);

/// Meridian radius of curvature M(lat) in meters; lat in radians.
double meridian_radius(double lat_rad);
/// Prime-vertical radius of curvature N(lat) in meters; lat in radians.
double prime_vertical_radius(double lat_rad);
}  // namespace wgs84

/// Local tangent-plane frame: linear meters-per-degree mapping anchored at an
/// origin, using the WGS-84 principal radii evaluated there. Valid for small
/// areas (a few km); to_local rejects points more than 1 degree away.
class LocalFrame {
 public:
  explicit LocalFrame(const LatLon& origin);

  /// (east, north) meters of p relative to the origin.
  Vec2 to_local(const LatLon& p) const;
  /// Exact inverse of to_local.
  LatLon to_latlon(double east, double north) const;

  const LatLon& origin() const { return origin_; }
  double meters_per_deg_north() const { return m_per_deg_north_; }
  double meters_per_deg_east() const { return m_per_deg_east_; }

 private:
  LatLon origin_;
  double m_per_deg_north_;
  double m_per_deg_east_;
};

/// Direction on the unit sphere: theta = elevation in [-pi/2, pi/2],
/// phi = azimuth in [-pi, pi). For headings, azimuth is measured clockwise
/// from north; all modules share that convention.
struct SphericalAngle {
  double theta = 0.0;
  double phi = 0.0;

  SphericalAngle() = default;
  SphericalAngle(double theta_rad, double phi_rad);

  /// Construct with phi wrapped into [-pi, pi); theta must already be valid.
  static SphericalAngle wrapped(double theta_rad, double phi_rad);
};

/// Pinhole intrinsics with the principal point fixed at the image center.
struct CameraIntrinsics {
  double focal_px = 0.0;
  int width_px = 0;
  int height_px = 0;

  CameraIntrinsics() = default;
  CameraIntrinsics(double focal, int width, int height);

  double cx() const { return width_px / 2.0; }
  double cy() const { return height_px / 2.0; }
};

/// Continuous pixel position; sub-pixel allowed.
struct PixelCoord {
  double x = 0.0;
  double y = 0.0;
};

/// Rigid transform stored as unit quaternion + translation, interpreted as
/// world-from-camera: X_world = R * X_camera + t, so t is the camera center.
/// Camera axes: z forward, x right, y down.
class Pose {
 public:
  Pose() : q_(Quat::Identity()), t_(Vec3::Zero()) {}
  Pose(const Quat& rotation, const Vec3& translation);
  Pose(const Mat3& rotation, const Vec3& translation);

  static Pose identity() { return Pose(); }

  const Quat& rotation() const { return q_; }
  const Vec3& translation() const { return t_; }
  Mat3 rotation_matrix() const { return q_.toRotationMatrix(); }

  /// this ∘ other (apply other first, then this).
  Pose compose(const Pose& other) const;
  Pose inverse() const;

  /// R x + t.
  Vec3 transform(const Vec3& x) const { return q_ * x + t_; }
  /// R^T (x - t).
  Vec3 inverse_transform(const Vec3& x) const { return q_.conjugate() * (x - t_); }

 private:
  Quat q_;
  Vec3 t_;
};

/// Cross-product (skew-symmetric) matrix of v.
Mat3 skew(const Vec3& v);

/// Exact SO(3) exponential map of a rotation vector.
Quat quat_exp(const Vec3& rotvec);
/// Rotation vector of a unit quaternion (inverse of quat_exp).
Vec3 quat_log(const Quat& q);

/// Forward gnomonic projection of direction `a` onto the tangent plane at
/// `center`. Returns normalized tangent coordinates plus cos(c), the cosine
/// of the angular distance to the tangent point. Multiply x, y by the focal
/// length for pixels. Throws CheiralityError when cos(c) <= 1e-9 (the
/// direction lies outside the front hemisphere).
struct GnomonicResult {
  double x = 0.0;
  double y = 0.0;
  double cos_c = 0.0;
};
GnomonicResult gnomonic_forward(const SphericalAngle& a, const SphericalAngle& center);

/// Inverse gnomonic projection; every finite tangent coordinate maps to a
/// direction in the front hemisphere.
SphericalAngle gnomonic_inverse(double x, double y, const SphericalAngle& center);

/// Pinhole projection of a world point. Throws CheiralityError when the point
/// is not strictly in front of the camera (depth <= 1e-6 m).
PixelCoord project_point(const CameraIntrinsics& intrinsics, const Pose& camera_pose,
                         const Vec3& point_world);

/// Camera-frame elevation/azimuth of the ray from the camera center to X.
/// Throws DomainError for a zero-length ray.
SphericalAngle bearing_to_point(const Pose& camera_pose, const Vec3& point_world);

/// Rotation (world-from-camera) of a virtual camera in an ENU world frame
/// looking along `heading` (clockwise from north) with `pitch` elevation.
/// Columns are the camera axes expressed in ENU; consistent with
/// gnomonic_forward in the sense that the pinhole projection of a direction
/// equals its gnomonic tangent coordinates at (pitch, heading).
Mat3 camera_rotation_enu(double heading, double pitch);

}  // namespace svloc
