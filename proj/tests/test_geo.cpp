#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "svloc/error.hpp"
#include "svloc/geo.hpp"
#include "svloc/rng.hpp"
#include "test_util.hpp"

using namespace svloc;

TEST_CASE("wrap_pi maps into (-pi, pi]") {
  CHECK(wrap_pi(0.0) == doctest::Approx(0.0));
  CHECK(wrap_pi(kPi) == doctest::Approx(kPi));
  CHECK(wrap_pi(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_pi(3.0 * kPi) == doctest::Approx(kPi));
  CHECK(wrap_pi(2.0 * kPi + 0.25) == doctest::Approx(0.25));
  CHECK(wrap_pi(-2.0 * kPi - 0.25) == doctest::Approx(-0.25));
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double a = rng.uniform(-50.0, 50.0);
    const double w = wrap_pi(a);
    CHECK(w > -kPi);
    CHECK(w <= kPi);
    CHECK(std::abs(std::remainder(w - a, 2.0 * kPi)) < 1e-9);
  }
}

TEST_CASE("LatLon and SphericalAngle validate their ranges") {
  CHECK_THROWS_AS(LatLon(90.5, 0.0), DomainError);
  CHECK_THROWS_AS(LatLon(0.0, 180.5), DomainError);
  CHECK_THROWS_AS(LatLon(0.0, 180.0), DomainError);  // 180 aliases -180
  CHECK_NOTHROW(LatLon(-90.0, -180.0));
  CHECK_THROWS_AS(SphericalAngle(2.0, 0.0), DomainError);
  CHECK_THROWS_AS(SphericalAngle(0.0, 4.0), DomainError);
  CHECK_NOTHROW(SphericalAngle(kPi / 2.0, -kPi));
  const SphericalAngle w = SphericalAngle::wrapped(0.3, 2.0 * kPi + 0.1);
  CHECK(w.phi == doctest::Approx(0.1));
}

TEST_CASE("WGS-84 radii match independently derived values") {
  const auto j = svloc_test::pinned_bounds()["geodesy"];
  const double lat = j["latitude_deg"].get<double>() * kPi / 180.0;
  CHECK(wgs84::meridian_radius(lat) ==
        doctest::Approx(j["meridian_radius_m"].get<double>()).epsilon(1e-12));
  CHECK(wgs84::prime_vertical_radius(lat) ==
        doctest::Approx(j["prime_vertical_radius_m"].get<double>()).epsilon(1e-12));
  // Radii are monotone in latitude and bracketed by the equatorial values.
  CHECK(wgs84::meridian_radius(0.0) < wgs84::meridian_radius(kPi / 2.0));
  CHECK(wgs84::prime_vertical_radius(0.0) == doctest::Approx(wgs84::kSemiMajorAxis));
}

TEST_CASE("LocalFrame converts degrees to meters per the pinned scales") {
  const auto j = svloc_test::pinned_bounds()["geodesy"];
  const double lat_deg = j["latitude_deg"].get<double>();
  const LocalFrame frame(LatLon(lat_deg, -118.44));
  CHECK(frame.meters_per_deg_north() ==
        doctest::Approx(j["meters_per_deg_north"].get<double>()).epsilon(1e-12));
  CHECK(frame.meters_per_deg_east() ==
        doctest::Approx(j["meters_per_deg_east"].get<double>()).epsilon(1e-12));

  // Degree arithmetic rounds at the 1e-14 deg level, about 1e-9 m here.
  const Vec2 p = frame.to_local(LatLon(lat_deg + 1e-3, -118.44));
  CHECK(std::abs(p.x()) < 1e-9);
  CHECK(std::abs(p.y() - j["displacement_north_1e3deg_m"].get<double>()) < 1e-7);
}

TEST_CASE("LocalFrame round-trips and keeps axes independent") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const double lat = rng.uniform(10.0, 80.0);
    const double lon = rng.uniform(-179.0, 179.0);
    const LocalFrame frame(LatLon(lat, lon));
    const double east = rng.uniform(-500.0, 500.0);
    const double north = rng.uniform(-500.0, 500.0);
    const LatLon back = frame.to_latlon(east, north);
    const Vec2 p = frame.to_local(back);
    CHECK(std::abs(p.x() - east) < 1e-7);
    CHECK(std::abs(p.y() - north) < 1e-7);
    // Pure-north displacement must not leak into east (and vice versa).
    const Vec2 n_only = frame.to_local(frame.to_latlon(0.0, 100.0));
    CHECK(std::abs(n_only.x()) < 1e-9);
    const Vec2 e_only = frame.to_local(frame.to_latlon(100.0, 0.0));
    CHECK(std::abs(e_only.y()) < 1e-9);
  }
  const LocalFrame frame(LatLon(34.06, -118.44));
  CHECK_THROWS_AS(frame.to_local(LatLon(36.0, -118.44)), DomainError);
}

TEST_CASE("gnomonic forward matches the tangent geometry") {
  const SphericalAngle center(0.0, 0.0);
  // A point 45 degrees of azimuth away on the equator lands at x = tan(45).
  const GnomonicResult r = gnomonic_forward(SphericalAngle(0.0, kPi / 4.0), center);
  CHECK(r.x == doctest::Approx(std::tan(kPi / 4.0)).epsilon(1e-12));
  CHECK(r.y == doctest::Approx(0.0));
  // Elevation-only offset lands on the y axis.
  const GnomonicResult u = gnomonic_forward(SphericalAngle(kPi / 4.0, 0.0), center);
  CHECK(u.x == doctest::Approx(0.0));
  CHECK(u.y == doctest::Approx(std::tan(kPi / 4.0)).epsilon(1e-12));
  // The tangent point itself maps to the origin.
  const GnomonicResult o = gnomonic_forward(center, center);
  CHECK(o.x == doctest::Approx(0.0));
  CHECK(o.y == doctest::Approx(0.0));
  CHECK(o.cos_c == doctest::Approx(1.0));
}

TEST_CASE("gnomonic rejects directions outside the front hemisphere") {
  const SphericalAngle center(0.0, 0.0);
  CHECK_THROWS_AS(gnomonic_forward(SphericalAngle(0.0, -kPi), center), CheiralityError);
  CHECK_THROWS_AS(gnomonic_forward(SphericalAngle(0.0, kPi / 2.0), center), CheiralityError);
}

TEST_CASE("gnomonic inverse undoes forward") {
  Rng rng(23);
  int checked = 0;
  while (checked < 500) {
    const SphericalAngle center(rng.uniform(-1.0, 1.0), rng.uniform(-kPi, kPi));
    const SphericalAngle a = SphericalAngle::wrapped(rng.uniform(-1.3, 1.3),
                                                     rng.uniform(-kPi, kPi));
    GnomonicResult r;
    try {
      r = gnomonic_forward(a, center);
    } catch (const CheiralityError&) {
      continue;
    }
    if (r.cos_c < 0.05) continue;  // stay away from the ill-conditioned rim
    const SphericalAngle back = gnomonic_inverse(r.x, r.y, center);
    CHECK(std::abs(back.theta - a.theta) < 1e-9);
    CHECK(std::abs(wrap_pi(back.phi - a.phi)) < 1e-9);
    ++checked;
  }
}

TEST_CASE("pose algebra composes and inverts") {
  Rng rng(31);
  for (int i = 0; i < 100; ++i) {
    const Vec3 w1(rng.normal(), rng.normal(), rng.normal());
    const Vec3 w2(rng.normal(), rng.normal(), rng.normal());
    const Pose a(quat_exp(w1), Vec3(rng.normal(), rng.normal(), rng.normal()));
    const Pose b(quat_exp(w2), Vec3(rng.normal(), rng.normal(), rng.normal()));
    const Pose ab = a.compose(b);
    const Vec3 x(rng.normal(), rng.normal(), rng.normal());
    CHECK((ab.transform(x) - a.transform(b.transform(x))).norm() < 1e-12);
    const Pose id = a.compose(a.inverse());
    CHECK((id.transform(x) - x).norm() < 1e-12);
    CHECK((a.inverse_transform(a.transform(x)) - x).norm() < 1e-12);
  }
}

TEST_CASE("quaternion exp/log round-trip") {
  Rng rng(37);
  for (int i = 0; i < 200; ++i) {
    const Vec3 w = Vec3(rng.normal(), rng.normal(), rng.normal()) * rng.uniform(0.0, 1.0);
    const Vec3 back = quat_log(quat_exp(w));
    CHECK((back - w).norm() < 1e-12);
  }
  CHECK(quat_log(Quat::Identity()).norm() == doctest::Approx(0.0));
  CHECK((quat_exp(Vec3::Zero()).coeffs() - Quat::Identity().coeffs()).norm() < 1e-15);
}

TEST_CASE("camera_rotation_enu points the optical axis along the heading") {
  // Heading 0 looks north with x east and y down.
  const Mat3 r0 = camera_rotation_enu(0.0, 0.0);
  CHECK((r0.col(2) - Vec3(0.0, 1.0, 0.0)).norm() < 1e-12);
  CHECK((r0.col(0) - Vec3(1.0, 0.0, 0.0)).norm() < 1e-12);
  CHECK((r0.col(1) - Vec3(0.0, 0.0, -1.0)).norm() < 1e-12);
  // Heading 90 degrees looks east (clockwise from north).
  const Mat3 r90 = camera_rotation_enu(kPi / 2.0, 0.0);
  CHECK((r90.col(2) - Vec3(1.0, 0.0, 0.0)).norm() < 1e-12);
  // Positive pitch tilts the axis up.
  const Mat3 rup = camera_rotation_enu(0.0, 0.3);
  CHECK(rup.col(2).z() == doctest::Approx(std::sin(0.3)));

  Rng rng(41);
  for (int i = 0; i < 100; ++i) {
    const Mat3 r = camera_rotation_enu(rng.uniform(-kPi, kPi), rng.uniform(-1.4, 1.4));
    CHECK((r * r.transpose() - Mat3::Identity()).norm() < 1e-12);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("project_point places world points on the expected pixels") {
  const CameraIntrinsics intr(320.0, 640, 480);
  const Pose cam(camera_rotation_enu(0.0, 0.0), Vec3(0.0, 0.0, 1.5));

  // Straight ahead: the image center.
  const PixelCoord c = project_point(intr, cam, Vec3(0.0, 10.0, 1.5));
  CHECK(c.x == doctest::Approx(320.0).epsilon(1e-12));
  CHECK(c.y == doctest::Approx(240.0).epsilon(1e-12));

  // East of the axis moves right; above the axis moves up (smaller v).
  const PixelCoord e = project_point(intr, cam, Vec3(1.0, 10.0, 1.5));
  CHECK(e.x == doctest::Approx(320.0 + 320.0 * 0.1).epsilon(1e-12));
  const PixelCoord up = project_point(intr, cam, Vec3(0.0, 10.0, 2.5));
  CHECK(up.y == doctest::Approx(240.0 - 320.0 * 0.1).epsilon(1e-12));

  CHECK_THROWS_AS(project_point(intr, cam, Vec3(0.0, -10.0, 1.5)), CheiralityError);
  CHECK_THROWS_AS(project_point(intr, cam, Vec3(0.0, 0.0, 1.5)), CheiralityError);
}

TEST_CASE("bearing_to_point agrees with the projection model") {
  const CameraIntrinsics intr(320.0, 640, 480);
  Rng rng(43);
  for (int i = 0; i < 200; ++i) {
    const double heading = rng.uniform(-kPi, kPi);
    const double pitch = rng.uniform(-0.5, 0.5);
    const Pose cam(camera_rotation_enu(heading, pitch),
                   Vec3(rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), 1.5));
    // A point well inside the frustum.
    const Vec3 dir_cam(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4), 1.0);
    const Vec3 pt = cam.transform(dir_cam * rng.uniform(3.0, 30.0));

    // Projecting through the pinhole and through the bearing + gnomonic path
    // must land on the same pixel.
    const PixelCoord px = project_point(intr, cam, pt);
    const SphericalAngle b = bearing_to_point(cam, pt);
    const GnomonicResult g = gnomonic_forward(b, SphericalAngle(0.0, 0.0));
    CHECK(px.x == doctest::Approx(intr.cx() + intr.focal_px * g.x).epsilon(1e-9));
    CHECK(px.y == doctest::Approx(intr.cy() - intr.focal_px * g.y).epsilon(1e-9));
  }
  const Pose cam;
  CHECK_THROWS_AS(bearing_to_point(cam, Vec3::Zero()), DomainError);
}

TEST_CASE("north-aligned camera bearing equals absolute azimuth/elevation") {
  // For a camera with identity-heading orientation at position C, the
  // camera-frame bearing of X is exactly the compass azimuth and elevation
  // of X - C; the pipeline's bearing observations rely on this equivalence.
  Rng rng(47);
  for (int i = 0; i < 100; ++i) {
    const Vec3 c(rng.uniform(-10.0, 10.0), rng.uniform(-10.0, 10.0), rng.uniform(0.0, 3.0));
    const Pose cam(camera_rotation_enu(0.0, 0.0), c);
    const Vec3 x(rng.uniform(-50.0, 50.0), rng.uniform(-50.0, 50.0), rng.uniform(-5.0, 15.0));
    if ((x - c).norm() < 1e-6) continue;
    const Vec3 d = x - c;
    const SphericalAngle b = bearing_to_point(cam, x);
    CHECK(b.phi == doctest::Approx(std::atan2(d.x(), d.y())).epsilon(1e-12));
    CHECK(b.theta ==
          doctest::Approx(std::atan2(d.z(), std::hypot(d.x(), d.y()))).epsilon(1e-12));
  }
}
