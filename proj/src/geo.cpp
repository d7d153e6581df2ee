#include "svloc/geo.hpp"

#include <algorithm>
#include <cmath>

namespace svloc {

double wrap_pi(double a) {
  // Wrap to (-pi, pi]. fmod keeps the result exact for small inputs.
  double x = std::fmod(a, 2.0 * kPi);
  if (x <= -kPi) x += 2.0 * kPi;
  if (x > kPi) x -= 2.0 * kPi;
  return x;
}

LatLon::LatLon(double lat_deg, double lon_deg) : lat(lat_deg), lon(lon_deg) {
  if (!(std::isfinite(lat) && std::isfinite(lon)))
    throw DomainError("LatLon: coordinates must be finite");
  if (lat < -90.0 || lat > 90.0) throw DomainError("LatLon: latitude outside [-90, 90]");
  if (lon < -180.0 || lon >= 180.0) throw DomainError("LatLon: longitude outside [-180, 180)");
}

namespace wgs84 {

double meridian_radius(double lat_rad) {
  const double s = std::sin(lat_rad);
  const double w = 1.0 - kEccentricitySq * s * s;
  return kSemiMajorAxis * (1.0 - kEccentricitySq) / (w * std::sqrt(w));
}

double prime_vertical_radius(double lat_rad) {
  const double s = std::sin(lat_rad);
  return kSemiMajorAxis / std::sqrt(1.0 - kEccentricitySq * s * s);
}

}  // namespace wgs84

LocalFrame::LocalFrame(const LatLon& origin) : origin_(origin) {
  const double lat_rad = origin.lat * kPi / 180.0;
  m_per_deg_north_ = wgs84::meridian_radius(lat_rad) * kPi / 180.0;
  m_per_deg_east_ = wgs84::prime_vertical_radius(lat_rad) * std::cos(lat_rad) * kPi / 180.0;
  if (!(m_per_deg_north_ > 0.0 && m_per_deg_east_ > 0.0))
    throw DomainError("LocalFrame: origin too close to a pole");
}

Vec2 LocalFrame::to_local(const LatLon& p) const {
  if (std::abs(p.lat - origin_.lat) >= 1.0 || std::abs(p.lon - origin_.lon) >= 1.0)
    throw DomainError("LocalFrame::to_local: point more than 1 degree from the origin");
  return {(p.lon - origin_.lon) * m_per_deg_east_, (p.lat - origin_.lat) * m_per_deg_north_};
}

LatLon LocalFrame::to_latlon(double east, double north) const {
  return LatLon(origin_.lat + north / m_per_deg_north_, origin_.lon + east / m_per_deg_east_);
}

SphericalAngle::SphericalAngle(double theta_rad, double phi_rad) : theta(theta_rad), phi(phi_rad) {
  if (!(std::isfinite(theta) && std::isfinite(phi)))
    throw DomainError("SphericalAngle: angles must be finite");
  if (theta < -kPi / 2.0 || theta > kPi / 2.0)
    throw DomainError("SphericalAngle: elevation outside [-pi/2, pi/2]");
  if (phi < -kPi || phi >= kPi) throw DomainError("SphericalAngle: azimuth outside [-pi, pi)");
}

SphericalAngle SphericalAngle::wrapped(double theta_rad, double phi_rad) {
  double phi = wrap_pi(phi_rad);
  if (phi == kPi) phi = -kPi;  // wrap_pi returns (-pi, pi]; the type wants [-pi, pi)
  return SphericalAngle(theta_rad, phi);
}

CameraIntrinsics::CameraIntrinsics(double focal, int width, int height)
    : focal_px(focal), width_px(width), height_px(height) {
  if (!(focal_px > 0.0)) throw DomainError("CameraIntrinsics: focal length must be positive");
  if (width_px <= 0 || height_px <= 0)
    throw DomainError("CameraIntrinsics: image dimensions must be positive");
}

Pose::Pose(const Quat& rotation, const Vec3& translation) : q_(rotation), t_(translation) {
  q_.normalize();
}

Pose::Pose(const Mat3& rotation, const Vec3& translation) : q_(rotation), t_(translation) {
  q_.normalize();
}

Pose Pose::compose(const Pose& other) const {
  Quat q = q_ * other.q_;
  q.normalize();
  return Pose(q, q_ * other.t_ + t_);
}

Pose Pose::inverse() const {
  const Quat qi = q_.conjugate();
  return Pose(qi, qi * (-t_));
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
  return m;
}

Quat quat_exp(const Vec3& rotvec) {
  const double angle = rotvec.norm();
  if (angle < 1e-12) {
    // Second-order series keeps the map smooth through zero.
    Quat q(1.0, 0.5 * rotvec.x(), 0.5 * rotvec.y(), 0.5 * rotvec.z());
    q.normalize();
    return q;
  }
  const double half = 0.5 * angle;
  const Vec3 axis = rotvec / angle;
  const double s = std::sin(half);
  return Quat(std::cos(half), s * axis.x(), s * axis.y(), s * axis.z());
}

Vec3 quat_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const Vec3 v(q.x(), q.y(), q.z());
  const double n = v.norm();
  if (n < 1e-12) return 2.0 * v;
  const double angle = 2.0 * std::atan2(n, q.w());
  return (angle / n) * v;
}

namespace {

GnomonicResult gnomonic_eval(const SphericalAngle& a, const SphericalAngle& c) {
  const double sin_t = std::sin(a.theta), cos_t = std::cos(a.theta);
  const double sin_t0 = std::sin(c.theta), cos_t0 = std::cos(c.theta);
  const double dphi = a.phi - c.phi;
  const double cos_d = std::cos(dphi), sin_d = std::sin(dphi);
  GnomonicResult r;
  r.cos_c = sin_t0 * sin_t + cos_t0 * cos_t * cos_d;
  if (r.cos_c > 1e-9) {
    r.x = cos_t * sin_d / r.cos_c;
    r.y = (cos_t0 * sin_t - sin_t0 * cos_t * cos_d) / r.cos_c;
  }
  return r;
}

}  // namespace

GnomonicResult gnomonic_forward(const SphericalAngle& a, const SphericalAngle& center) {
  GnomonicResult r = gnomonic_eval(a, center);
  if (r.cos_c <= 1e-9)
    throw CheiralityError("gnomonic_forward: direction behind the tangent plane");
  return r;
}

SphericalAngle gnomonic_inverse(double x, double y, const SphericalAngle& center) {
  if (!(std::isfinite(x) && std::isfinite(y)))
    throw DomainError("gnomonic_inverse: tangent coordinates must be finite");
  const double inv_w = 1.0 / std::sqrt(1.0 + x * x + y * y);
  const double sin_t0 = std::sin(center.theta), cos_t0 = std::cos(center.theta);
  double s = (sin_t0 + y * cos_t0) * inv_w;
  s = std::clamp(s, -1.0, 1.0);
  const double theta = std::asin(s);
  const double phi = center.phi + std::atan2(x, cos_t0 - y * sin_t0);
  return SphericalAngle::wrapped(theta, phi);
}

PixelCoord project_point(const CameraIntrinsics& intrinsics, const Pose& camera_pose,
                         const Vec3& point_world) {
  const Vec3 xc = camera_pose.inverse_transform(point_world);
  if (xc.z() <= 1e-6) throw CheiralityError("project_point: point behind the camera");
  return {intrinsics.cx() + intrinsics.focal_px * xc.x() / xc.z(),
          intrinsics.cy() + intrinsics.focal_px * xc.y() / xc.z()};
}

SphericalAngle bearing_to_point(const Pose& camera_pose, const Vec3& point_world) {
  const Vec3 d = camera_pose.inverse_transform(point_world);
  const double n = d.norm();
  if (n < 1e-12) throw DomainError("bearing_to_point: point coincides with the camera center");
  const double phi = std::atan2(d.x(), d.z());
  const double theta = std::atan2(-d.y(), std::hypot(d.x(), d.z()));
  return SphericalAngle::wrapped(theta, phi);
}

Mat3 camera_rotation_enu(double heading, double pitch) {
  const double sp = std::sin(heading), cp = std::cos(heading);
  const double st = std::sin(pitch), ct = std::cos(pitch);
  Mat3 r;
  // Columns: camera x (right), y (down), z (forward) expressed in ENU.
  r.col(0) = Vec3(cp, -sp, 0.0);
  r.col(1) = Vec3(st * sp, st * cp, -ct);
  r.col(2) = Vec3(ct * sp, ct * cp, st);
  return r;
}

}  // namespace svloc
