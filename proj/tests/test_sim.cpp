#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "svloc/error.hpp"
#include "svloc/fusion.hpp"
#include "svloc/geo.hpp"
#include "svloc/matching.hpp"
#include "svloc/pano.hpp"
#include "svloc/rng.hpp"
#include "svloc/sfm.hpp"
#include "svloc/sim.hpp"
#include "test_util.hpp"

using namespace svloc;

namespace {

SimConfig noiseless_config() {
  SimConfig cfg = standard_scenario();
  cfg.noise.pixel_sigma_px = 0.0;
  cfg.noise.descriptor_sigma = 0.0;
  cfg.noise.outlier_fraction = 0.0;
  cfg.noise.pano_pos_sigma_m = 0.0;
  cfg.noise.pano_heading_sigma_rad = 0.0;
  cfg.noise.accel_noise_density = 0.0;
  cfg.noise.gyro_noise_density = 0.0;
  cfg.noise.gps_sigma_m = 0.0;
  cfg.noise.ar_drift_rad_per_m = 0.0;
  return cfg;
}

/// noiseless_config without the standard mid-track stop, for worlds shorter
/// than the 1 km standard track (the stop at 500 m would fall outside them).
SimConfig short_track_config() {
  SimConfig cfg = noiseless_config();
  cfg.stops.clear();
  return cfg;
}

/// Time at which the drive reaches smooth arc length s (bisection; only
/// valid for s values the vehicle passes through while moving).
double time_at_arc_length(const GroundTruth& truth, double s) {
  double lo = 0.0;
  double hi = truth.duration;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (truth.arc_length_at(mid) < s) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Distance from a point to the nearest leg of the unrounded route polyline.
double distance_to_polyline(const std::vector<Vec2>& poly, const Vec2& p) {
  double best = 1e300;
  for (std::size_t i = 0; i + 1 < poly.size(); ++i) {
    const Vec2 a = poly[i];
    const Vec2 b = poly[i + 1];
    const Vec2 ab = b - a;
    const double t = std::clamp(ab.dot(p - a) / ab.squaredNorm(), 0.0, 1.0);
    best = std::min(best, (a + t * ab - p).norm());
  }
  return best;
}

std::vector<Vec2> truth_polyline_2d(const GroundTruth& truth) {
  std::vector<Vec2> poly;
  for (const TimedVertex& v : truth.vertices) poly.emplace_back(v.position.x(), v.position.y());
  return poly;
}

std::unordered_map<int, Vec3> landmark_map(const Scene& scene) {
  std::unordered_map<int, Vec3> m;
  for (const SceneLandmark& lm : scene.landmarks) m.emplace(lm.id, lm.position);
  return m;
}

double desc_norm(const Descriptor& d) {
  double s = 0.0;
  for (double v : d.values) s += v * v;
  return std::sqrt(s);
}

double desc_dot(const Descriptor& a, const Descriptor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) s += a.values[i] * b.values[i];
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// World generation
// ---------------------------------------------------------------------------

TEST_CASE("a 1 km corridor gets one panorama per ten meters") {
  const SimWorld w = generate_world(1000.0, {}, noiseless_config());
  CHECK(w.panos.records().size() == 100);

  const auto& records = w.panos.records();
  std::set<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    ids.insert(records[i].id);
    CHECK(records[i].true_pose.translation().z() == doctest::Approx(2.5));
    if (i > 0) {
      const double gap =
          (records[i].true_pose.translation() - records[i - 1].true_pose.translation()).norm();
      CHECK(gap == doctest::Approx(10.0).epsilon(1e-9));
    }
  }
  CHECK(ids.size() == records.size());
}

TEST_CASE("zero metadata noise records the true panorama poses exactly") {
  const SimWorld w = generate_world(300.0, {}, short_track_config());
  REQUIRE(!w.panos.records().empty());
  for (const PanoramaRecord& r : w.panos.records()) {
    const Vec2 en = w.scene.frame.to_local(r.location);
    CHECK(std::abs(en.x() - r.true_pose.translation().x()) < 1e-9);
    CHECK(std::abs(en.y() - r.true_pose.translation().y()) < 1e-9);
    // An east-heading drive is a quarter turn clockwise from north.
    CHECK(r.vehicle_heading == doctest::Approx(M_PI / 2.0).epsilon(1e-12));
  }
}

TEST_CASE("metadata noise perturbs recorded poses but not ground truth") {
  SimConfig cfg = short_track_config();
  cfg.noise.pano_pos_sigma_m = 1.0;
  cfg.noise.pano_heading_sigma_rad = 0.02;
  cfg.noise.master_seed = 9;
  const SimWorld w = generate_world(300.0, {}, cfg);
  double worst_pos = 0.0;
  double worst_heading = 0.0;
  for (const PanoramaRecord& r : w.panos.records()) {
    const Vec2 en = w.scene.frame.to_local(r.location);
    const Vec2 tru(r.true_pose.translation().x(), r.true_pose.translation().y());
    worst_pos = std::max(worst_pos, (en - tru).norm());
    worst_heading = std::max(worst_heading, std::abs(wrap_pi(r.vehicle_heading - M_PI / 2.0)));
    CHECK(r.true_pose.translation().z() == doctest::Approx(2.5));
  }
  CHECK(worst_pos > 0.1);       // noise actually applied
  CHECK(worst_pos < 6.0);       // plausible for a 1 m sigma
  CHECK(worst_heading > 1e-3);
  CHECK(worst_heading < 0.12);  // plausible for a 0.02 rad sigma
}

TEST_CASE("landmarks flank the road within the depth band") {
  const SimWorld w = generate_world(1000.0, {}, noiseless_config());
  CHECK(w.scene.landmarks.size() == 1000);
  const auto poly = truth_polyline_2d(w.truth);
  std::set<int> ids;
  for (const SceneLandmark& lm : w.scene.landmarks) {
    ids.insert(lm.id);
    const double d = distance_to_polyline(poly, Vec2(lm.position.x(), lm.position.y()));
    CHECK(d >= 5.0);
    CHECK(d <= 30.0);
  }
  CHECK(ids.size() == w.scene.landmarks.size());
}

TEST_CASE("same seed reproduces the world bit for bit, different seeds do not") {
  SimConfig cfg = standard_scenario();
  cfg.stops.clear();  // the standard stop sits beyond this short track
  cfg.noise.master_seed = 42;
  const SimWorld a = generate_world(400.0, {}, cfg);
  const SimWorld b = generate_world(400.0, {}, cfg);

  REQUIRE(a.scene.landmarks.size() == b.scene.landmarks.size());
  for (std::size_t i = 0; i < a.scene.landmarks.size(); ++i) {
    CHECK(a.scene.landmarks[i].position == b.scene.landmarks[i].position);
  }
  REQUIRE(a.panos.records().size() == b.panos.records().size());
  for (std::size_t i = 0; i < a.panos.records().size(); ++i) {
    const PanoramaRecord& ra = a.panos.records()[i];
    const PanoramaRecord& rb = b.panos.records()[i];
    CHECK(ra.location.lat == rb.location.lat);
    CHECK(ra.location.lon == rb.location.lon);
    CHECK(ra.vehicle_heading == rb.vehicle_heading);
    // Spot-check the rendered panorama content itself.
    for (double phi : {-1.0, 0.0, 2.0}) {
      const SphericalAngle ang(0.1, phi);
      CHECK(ra.equirect->sample(ang) == rb.equirect->sample(ang));
    }
  }

  cfg.noise.master_seed = 43;
  const SimWorld c = generate_world(400.0, {}, cfg);
  bool any_differs = false;
  for (std::size_t i = 0; i < a.panos.records().size(); ++i) {
    if (a.panos.records()[i].location.lat != c.panos.records()[i].location.lat) {
      any_differs = true;
      break;
    }
  }
  CHECK(any_differs);
}

TEST_CASE("generate_world validates its configuration") {
  const SimConfig base = short_track_config();
  CHECK_THROWS_WITH_AS(generate_world(10.0, {}, base), "track length must be >= 50 m",
                       DomainError);

  SimConfig narrow = base;
  narrow.facade_offset_left_m = 2.0;  // violates the landmark depth band
  CHECK_THROWS_WITH_AS(generate_world(300.0, {}, narrow), "facade offsets must be in [5, 30] m",
                       DomainError);

  SimConfig fast_gps = base;
  fast_gps.noise.gps_rate_hz = 500.0;  // above the IMU rate
  CHECK_THROWS_WITH_AS(generate_world(300.0, {}, fast_gps),
                       "GPS rate must not exceed the IMU rate", DomainError);

  SimConfig bad_frac = base;
  bad_frac.noise.outlier_fraction = 1.0;
  CHECK_THROWS_WITH_AS(generate_world(300.0, {}, bad_frac),
                       "outlier_fraction must be in [0, 1)", DomainError);

  // A stop 5 m from the start cannot fit the jerk-limited speed ramps
  // (each full 0 <-> cruise change covers 18 m at the default profile).
  SimConfig tight = base;
  tight.stops = {{5.0, 10.0}};
  CHECK_THROWS_AS(generate_world(300.0, {}, tight), DomainError);
  SimConfig outside = base;
  outside.stops = {{500.0, 10.0}};  // beyond a 300 m track
  CHECK_THROWS_WITH_AS(generate_world(300.0, {}, outside),
                       "stops must be strictly increasing and inside the track", DomainError);

  // Turns must be genuine turns and legs must fit their corner fillets.
  CHECK_THROWS_WITH_AS(generate_world(300.0, {{100.0, M_PI}}, base),
                       "turn angles must be nonzero and strictly less than pi", DomainError);
  CHECK_THROWS_WITH_AS(generate_world(300.0, {{0.5, M_PI / 2.0}}, base),
                       "corner fillets overlap: route legs too short for the fillet radius",
                       DomainError);
}

// ---------------------------------------------------------------------------
// Ground-truth kinematics
// ---------------------------------------------------------------------------

TEST_CASE("the standard scenario timeline and stop windows are exact") {
  const SimWorld w = generate_world(1000.0, {}, standard_scenario());
  const GroundTruth& truth = w.truth;

  // 5 s initial rest, then per 500 m leg: 4.5 s accel + 58 s cruise +
  // 4.5 s decel, with a 20 s stop in between.
  CHECK(truth.duration == doctest::Approx(159.0).epsilon(1e-12));
  CHECK(truth.total_length == doctest::Approx(1000.0).epsilon(1e-12));

  // Initial rest is exact.
  for (double t : {0.0, 2.5, 4.99}) {
    CHECK(truth.speed_at(t) == 0.0);
    CHECK(truth.arc_length_at(t) == 0.0);
  }
  // The mid-drive stop pins the vehicle at exactly half distance.
  int zero_samples = 0;
  for (int k = 0; 6.0 + 0.1 * k < truth.duration - 1.0; ++k) {
    const double t = 6.0 + 0.1 * k;
    if (truth.speed_at(t) == 0.0) {
      ++zero_samples;
      CHECK(truth.arc_length_at(t) == doctest::Approx(500.0).epsilon(1e-12));
    }
  }
  CHECK(zero_samples >= 195);
  CHECK(zero_samples <= 205);

  // Arc length is monotone and speeds are never negative.
  double prev = 0.0;
  for (double t = 0.0; t <= truth.duration; t += 0.25) {
    const double s = truth.arc_length_at(t);
    CHECK(s >= prev);
    CHECK(truth.speed_at(t) >= 0.0);
    prev = s;
  }
  CHECK(truth.arc_length_at(truth.duration) == doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("speed and acceleration are consistent derivatives") {
  const SimWorld w = generate_world(1000.0, {}, standard_scenario());
  const GroundTruth& truth = w.truth;
  // Sample inside smooth stretches (away from jerk-phase boundaries).
  for (double t : {6.2, 7.3, 30.0, 70.0, 100.0, 120.0}) {
    const double h = 1e-4;
    const double dv = (truth.speed_at(t + h) - truth.speed_at(t - h)) / (2.0 * h);
    CHECK(dv == doctest::Approx(truth.accel_at(t)).epsilon(1e-5).scale(1.0));
    const double ds = (truth.arc_length_at(t + h) - truth.arc_length_at(t - h)) / (2.0 * h);
    CHECK(ds == doctest::Approx(truth.speed_at(t)).epsilon(1e-7).scale(1.0));
  }
}

TEST_CASE("a left turn follows the fillet geometry") {
  const std::vector<RouteTurn> turns = {{300.0, M_PI / 2.0}};
  const SimWorld straight = generate_world(1000.0, {}, noiseless_config());
  const SimWorld turned = generate_world(1000.0, turns, noiseless_config());
  const GroundTruth& truth = turned.truth;

  // The fillet shortcuts the corner: two tangent cutbacks plus the arc.
  const double r = 5.0;
  const double expect_len = 1000.0 - 2.0 * r + r * M_PI / 2.0;
  CHECK(truth.total_length == doctest::Approx(expect_len).epsilon(1e-12));
  CHECK(truth.total_length < straight.truth.total_length);

  // The unrounded reference polyline keeps the corner vertex.
  REQUIRE(truth.vertices.size() == 3);
  CHECK(truth.vertices.front().position.norm() < 1e-12);
  CHECK((truth.vertices[1].position - Vec3(300.0, 0.0, 0.0)).norm() < 1e-9);
  CHECK((truth.vertices.back().position - Vec3(300.0, 700.0, 0.0)).norm() < 1e-9);
  CHECK(truth.vertices.front().t < truth.vertices[1].t);
  CHECK(truth.vertices[1].t < truth.vertices.back().t);

  // The corner occupies smooth arc [295, 295 + r*pi/2]; the heading ramps
  // from east (0) to north (pi/2), anticlockwise positive.
  const double s_in = 300.0 - r;  // leg length minus the tangent cutback
  const double s_out = s_in + r * M_PI / 2.0;
  const double t_before = time_at_arc_length(truth, s_in - 2.0);
  const double t_mid = time_at_arc_length(truth, 0.5 * (s_in + s_out));
  const double t_after = time_at_arc_length(truth, s_out + 2.0);
  CHECK(truth.heading_at(t_before) == doctest::Approx(0.0).epsilon(1e-9).scale(1.0));
  CHECK(truth.curvature_at(t_before) == 0.0);
  CHECK(truth.heading_at(t_mid) == doctest::Approx(M_PI / 4.0).epsilon(1e-9));
  CHECK(truth.curvature_at(t_mid) == doctest::Approx(1.0 / r).epsilon(1e-12));
  CHECK(truth.heading_at(t_after) == doctest::Approx(M_PI / 2.0).epsilon(1e-9));
  CHECK(truth.curvature_at(t_after) == 0.0);

  // Inside the corner the motion is unit-speed in arc length, the step
  // direction matches the heading, and d(heading)/ds is the curvature.
  for (double s : {296.0, 298.0, 300.0, 302.0}) {
    const double h = 1e-4;
    const double t0 = time_at_arc_length(truth, s - h);
    const double t1 = time_at_arc_length(truth, s + h);
    const Vec3 p0 = truth.position_at(t0);
    const Vec3 p1 = truth.position_at(t1);
    const double chi = truth.heading_at(time_at_arc_length(truth, s));
    CHECK(std::abs(wrap_pi(std::atan2(p1.y() - p0.y(), p1.x() - p0.x()) - chi)) < 1e-3);
    CHECK((p1 - p0).norm() == doctest::Approx(2.0 * h).epsilon(1e-3));
    const double dchi = wrap_pi(truth.heading_at(t1) - truth.heading_at(t0)) / (2.0 * h);
    CHECK(dchi == doctest::Approx(1.0 / r).epsilon(1e-3));
  }

  // The legs before and after stay straight and correctly aimed.
  CHECK(truth.heading_at(10.0) == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
  CHECK(truth.heading_at(truth.duration - 10.0) == doctest::Approx(M_PI / 2.0).epsilon(1e-12));
  CHECK(truth.curvature_at(100.0) == 0.0);
}

TEST_CASE("camera poses ride the body at the mounting height") {
  const SimWorld w = generate_world(1000.0, {}, noiseless_config());
  const Pose cam = w.truth.camera_pose_at(30.0);
  CHECK(cam.translation().z() == doctest::Approx(1.5).epsilon(1e-12));
  // Straight east drive: the optical axis (camera z) points east, camera x
  // (right) points south, camera y (down) points down.
  const Mat3 R = cam.rotation_matrix();
  CHECK((R.col(2) - Vec3(1.0, 0.0, 0.0)).norm() < 1e-12);
  CHECK((R.col(0) - Vec3(0.0, -1.0, 0.0)).norm() < 1e-12);
  CHECK((R.col(1) - Vec3(0.0, 0.0, -1.0)).norm() < 1e-12);
}

// ---------------------------------------------------------------------------
// Observation rendering
// ---------------------------------------------------------------------------

TEST_CASE("zero-noise observations project landmarks exactly") {
  const SimConfig cfg = short_track_config();
  const SimWorld w = generate_world(300.0, {}, cfg);
  const auto landmarks = landmark_map(w.scene);
  const Pose cam = w.truth.camera_pose_at(30.0);
  const CameraIntrinsics intr(320.0, 640, 480);

  const RenderedObservations obs = render_observations(w.scene, cam, intr, cfg, 77);
  REQUIRE(obs.keypoints.size() > 20);
  REQUIRE(obs.keypoints.size() == obs.descriptors.size());
  REQUIRE(obs.keypoints.size() == obs.landmark_ids.size());

  for (std::size_t i = 0; i < obs.keypoints.size(); ++i) {
    REQUIRE(obs.landmark_ids[i] >= 0);  // no outliers configured
    const Vec3 lm = landmarks.at(obs.landmark_ids[i]);
    const PixelCoord px = project_point(intr, cam, lm);
    CHECK(obs.keypoints[i].position.x == doctest::Approx(px.x).epsilon(1e-12));
    CHECK(obs.keypoints[i].position.y == doctest::Approx(px.y).epsilon(1e-12));
    CHECK(std::abs(desc_norm(obs.descriptors[i]) - 1.0) < 1e-9);
    // Rendered landmarks are within visibility range and in front.
    CHECK((lm - cam.translation()).norm() <= 60.0);
    CHECK(cam.inverse_transform(lm).z() > 0.0);
  }
}

TEST_CASE("landmarks behind the camera or out of range are absent") {
  const SimConfig cfg = short_track_config();
  const SimWorld w = generate_world(300.0, {}, cfg);
  const Pose cam = w.truth.camera_pose_at(30.0);
  const CameraIntrinsics intr(320.0, 640, 480);
  const RenderedObservations obs = render_observations(w.scene, cam, intr, cfg, 77);

  std::set<int> rendered(obs.landmark_ids.begin(), obs.landmark_ids.end());
  for (const SceneLandmark& lm : w.scene.landmarks) {
    if (rendered.count(lm.id)) continue;
    const Vec3 in_cam = cam.inverse_transform(lm.position);
    const bool behind = in_cam.z() <= 1e-6;
    const bool far = (lm.position - cam.translation()).norm() > 60.0;
    bool outside = false;
    if (!behind && !far) {
      // Image bounds are half-open: [0, width) x [0, height).
      const PixelCoord px = project_point(intr, cam, lm.position);
      outside = px.x < 0.0 || px.x >= intr.width_px || px.y < 0.0 || px.y >= intr.height_px;
    }
    CHECK((behind || far || outside));
  }
}

TEST_CASE("outlier fraction one half doubles the keypoint count") {
  SimConfig cfg = short_track_config();
  cfg.noise.outlier_fraction = 0.5;  // one injected outlier per true landmark
  const SimWorld w = generate_world(300.0, {}, cfg);
  const Pose cam = w.truth.camera_pose_at(30.0);
  const CameraIntrinsics intr(320.0, 640, 480);

  const RenderedObservations obs = render_observations(w.scene, cam, intr, cfg, 5);
  const auto n_true = std::count_if(obs.landmark_ids.begin(), obs.landmark_ids.end(),
                                    [](int id) { return id >= 0; });
  const auto n_out = std::count_if(obs.landmark_ids.begin(), obs.landmark_ids.end(),
                                   [](int id) { return id == -1; });
  CHECK(n_true > 0);
  CHECK(n_out == n_true);
  CHECK(n_true + n_out == std::ptrdiff_t(obs.keypoints.size()));
  for (std::size_t i = 0; i < obs.keypoints.size(); ++i) {
    if (obs.landmark_ids[i] != -1) continue;
    CHECK(obs.keypoints[i].position.x >= 0.0);
    CHECK(obs.keypoints[i].position.x < intr.width_px);
    CHECK(obs.keypoints[i].position.y >= 0.0);
    CHECK(obs.keypoints[i].position.y < intr.height_px);
    CHECK(std::abs(desc_norm(obs.descriptors[i]) - 1.0) < 1e-9);
  }
}

TEST_CASE("descriptors persist per landmark and degrade gracefully with noise") {
  SimConfig cfg = short_track_config();
  cfg.noise.descriptor_sigma = 0.05;
  const SimWorld w = generate_world(300.0, {}, cfg);
  const Pose cam_a = w.truth.camera_pose_at(30.0);
  const Pose cam_b = w.truth.camera_pose_at(31.0);
  const CameraIntrinsics intr(320.0, 640, 480);

  const RenderedObservations a = render_observations(w.scene, cam_a, intr, cfg, 100);
  const RenderedObservations b = render_observations(w.scene, cam_b, intr, cfg, 200);

  int shared = 0;
  for (std::size_t i = 0; i < a.landmark_ids.size(); ++i) {
    for (std::size_t j = 0; j < b.landmark_ids.size(); ++j) {
      if (a.landmark_ids[i] != b.landmark_ids[j]) continue;
      // Same landmark, different observation noise: descriptors stay close.
      CHECK(desc_dot(a.descriptors[i], b.descriptors[j]) > 0.9);
      ++shared;
    }
  }
  CHECK(shared > 5);

  // Zero sigma reproduces the persistent descriptor identically, regardless
  // of the per-render seed.
  const SimConfig clean = short_track_config();
  const RenderedObservations c = render_observations(w.scene, cam_a, intr, clean, 100);
  const RenderedObservations d = render_observations(w.scene, cam_a, intr, clean, 999);
  REQUIRE(c.landmark_ids == d.landmark_ids);
  for (std::size_t i = 0; i < c.descriptors.size(); ++i) {
    REQUIRE(c.descriptors[i].values.size() == d.descriptors[i].values.size());
    for (std::size_t k = 0; k < c.descriptors[i].values.size(); ++k) {
      CHECK(c.descriptors[i].values[k] == d.descriptors[i].values[k]);
    }
  }
}

TEST_CASE("pixel noise displaces keypoints on the configured scale") {
  SimConfig cfg = short_track_config();
  cfg.noise.pixel_sigma_px = 1.0;
  const SimWorld w = generate_world(300.0, {}, cfg);
  const auto landmarks = landmark_map(w.scene);
  const Pose cam = w.truth.camera_pose_at(30.0);
  const CameraIntrinsics intr(320.0, 640, 480);
  const RenderedObservations obs = render_observations(w.scene, cam, intr, cfg, 31);

  double sum_sq = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < obs.keypoints.size(); ++i) {
    const PixelCoord px = project_point(intr, cam, landmarks.at(obs.landmark_ids[i]));
    const double dx = obs.keypoints[i].position.x - px.x;
    const double dy = obs.keypoints[i].position.y - px.y;
    sum_sq += dx * dx + dy * dy;
    ++n;
  }
  REQUIRE(n > 20);
  const double rms_per_axis = std::sqrt(sum_sq / (2.0 * n));
  CHECK(rms_per_axis > 0.6);
  CHECK(rms_per_axis < 1.6);
}

// ---------------------------------------------------------------------------
// Virtual-view observations vs. panorama extraction
// ---------------------------------------------------------------------------

TEST_CASE("view observations with exact metadata match the believed view pose") {
  const SimConfig cfg = short_track_config();
  const SimWorld w = generate_world(300.0, {}, cfg);
  const auto landmarks = landmark_map(w.scene);
  const PanoramaRecord& rec = w.panos.records()[10];
  const CameraIntrinsics intr(320.0, 640, 480);
  const double heading = rec.vehicle_heading + 0.3;  // absolute view direction
  const double pitch = 0.05;

  const RenderedObservations obs =
      render_view_observations(w.scene, rec, heading, pitch, intr, cfg, 3);
  REQUIRE(obs.keypoints.size() > 5);

  const Pose view = virtual_view_pose(rec, w.scene.frame, heading, pitch);
  for (std::size_t i = 0; i < obs.keypoints.size(); ++i) {
    const PixelCoord px = project_point(intr, view, landmarks.at(obs.landmark_ids[i]));
    CHECK(obs.keypoints[i].position.x == doctest::Approx(px.x).epsilon(1e-9));
    CHECK(obs.keypoints[i].position.y == doctest::Approx(px.y).epsilon(1e-9));
  }
}

TEST_CASE("metadata heading error shifts apparent keypoints like the extractor") {
  SimConfig cfg = short_track_config();
  cfg.noise.pano_heading_sigma_rad = 0.05;
  cfg.noise.master_seed = 17;
  const SimWorld w = generate_world(300.0, {}, cfg);
  const auto landmarks = landmark_map(w.scene);
  const PanoramaRecord& rec = w.panos.records()[12];

  // The recorded heading deviates from the true one; the content stays true.
  const double true_heading = M_PI / 2.0;
  REQUIRE(std::abs(wrap_pi(rec.vehicle_heading - true_heading)) > 1e-4);

  const CameraIntrinsics intr(320.0, 640, 480);
  const double heading = rec.vehicle_heading - 0.2;
  const double pitch = 0.0;
  const RenderedObservations obs =
      render_view_observations(w.scene, rec, heading, pitch, intr, cfg, 21);
  REQUIRE(obs.keypoints.size() > 5);

  // Independent construction: a landmark's true direction lands on the pano
  // grid anchored at the true heading; the extractor interprets that same
  // grid as anchored at the recorded heading. The apparent camera-frame
  // direction is therefore
  //   R_view^T * R_grid_recorded * R_grid_true^T * (landmark - center).
  const Mat3 R_grid_true = camera_rotation_enu(true_heading, 0.0);
  const Mat3 R_grid_recorded = camera_rotation_enu(rec.vehicle_heading, 0.0);
  const Mat3 R_view = camera_rotation_enu(heading, pitch);
  for (std::size_t i = 0; i < obs.keypoints.size(); ++i) {
    const Vec3 lm = landmarks.at(obs.landmark_ids[i]);
    const Vec3 d_grid = R_grid_true.transpose() * (lm - rec.true_pose.translation());
    const Vec3 d_cam = R_view.transpose() * (R_grid_recorded * d_grid);
    REQUIRE(d_cam.z() > 0.0);
    const double ex = intr.cx() + intr.focal_px * d_cam.x() / d_cam.z();
    const double ey = intr.cy() + intr.focal_px * d_cam.y() / d_cam.z();
    CHECK(obs.keypoints[i].position.x == doctest::Approx(ex).epsilon(1e-9));
    CHECK(obs.keypoints[i].position.y == doctest::Approx(ey).epsilon(1e-9));
  }
}

TEST_CASE("apparent keypoints sit on intensity peaks of the extracted view") {
  const SimConfig cfg = short_track_config();
  const SimWorld w = generate_world(300.0, {}, cfg);
  const PanoramaRecord& rec = w.panos.records()[14];
  const CameraIntrinsics intr(320.0, 640, 480);
  const double heading = rec.vehicle_heading + 0.4;
  const double pitch = 0.1;

  const VirtualView view = extract_view(rec, w.scene.frame, heading, pitch, intr);
  const RenderedObservations obs =
      render_view_observations(w.scene, rec, heading, pitch, intr, cfg, 4);

  int in_bounds = 0;
  int peaks = 0;
  for (std::size_t i = 0; i < obs.keypoints.size(); ++i) {
    const PixelCoord at = obs.keypoints[i].position;
    if (at.x < 8.0 || at.x > intr.width_px - 8.0 || at.y < 8.0 || at.y > intr.height_px - 8.0) {
      continue;
    }
    ++in_bounds;
    const double center = view.value_at(at);
    bool is_peak = center > 1e-3;
    for (const auto& [dx, dy] :
         std::vector<std::pair<double, double>>{{6, 0}, {-6, 0}, {0, 6}, {0, -6}}) {
      is_peak = is_peak && center > view.value_at({at.x + dx, at.y + dy});
    }
    if (is_peak) ++peaks;
  }
  // Most in-bounds keypoints coincide with a local maximum of the actual
  // resampled panorama content (dense clusters may merge a few).
  REQUIRE(in_bounds > 5);
  CHECK(peaks > in_bounds / 2);
}

// ---------------------------------------------------------------------------
// Gradient images
// ---------------------------------------------------------------------------

TEST_CASE("an empty scene renders a null gradient image") {
  Scene empty;
  empty.frame = LocalFrame(LatLon(0.0, 0.0));
  const CameraIntrinsics intr(320.0, 640, 480);
  const AnalyticImage img = render_gradient_image(empty, Pose(), intr, noiseless_config());
  CHECK(img.splats.empty());
  CHECK(img.value(100.0, 100.0) == 0.0);
  CHECK(img.gradient(100.0, 100.0).norm() == 0.0);
}

TEST_CASE("a single splat is radially symmetric with a flat top") {
  AnalyticImage img;
  img.width = 200;
  img.height = 200;
  img.splats.push_back({100.0, 100.0, 1.0});

  CHECK(img.gradient(100.0, 100.0).norm() < 1e-12);
  for (double angle = 0.0; angle < 6.28; angle += 0.7) {
    const double r = 4.0;
    const double x = 100.0 + r * std::cos(angle);
    const double y = 100.0 + r * std::sin(angle);
    CHECK(img.value(x, y) == doctest::Approx(img.value(100.0 + r, 100.0)).epsilon(1e-12));
    // The gradient points back toward the splat center.
    const Vec2 g = img.gradient(x, y);
    const Vec2 to_center(100.0 - x, 100.0 - y);
    CHECK(g.dot(to_center) > 0.0);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  const SimConfig cfg = short_track_config();
  const SimWorld w = generate_world(300.0, {}, cfg);
  const Pose cam = w.truth.camera_pose_at(40.0);
  const CameraIntrinsics intr(320.0, 640, 480);
  const AnalyticImage img = render_gradient_image(w.scene, cam, intr, cfg);
  REQUIRE(!img.splats.empty());

  Rng rng(12);
  const double h = 1e-5;
  for (int k = 0; k < 50; ++k) {
    const double x = rng.uniform(0.0, double(intr.width_px));
    const double y = rng.uniform(0.0, double(intr.height_px));
    const Vec2 g = img.gradient(x, y);
    const double gx = (img.value(x + h, y) - img.value(x - h, y)) / (2.0 * h);
    const double gy = (img.value(x, y + h) - img.value(x, y - h)) / (2.0 * h);
    CHECK(std::abs(g.x() - gx) < 1e-6);
    CHECK(std::abs(g.y() - gy) < 1e-6);
  }

  // The matching-layer wrapper shares the same analytic field.
  const GradientField field = render_gradient_field(w.scene, cam, intr, cfg);
  CHECK(field.width == 640);
  CHECK(field.height == 480);
  const Vec2 a = field.gradient(123.4, 210.7);
  const Vec2 b = img.gradient(123.4, 210.7);
  CHECK((a - b).norm() < 1e-12);
}

TEST_CASE("view gradient images splat at the apparent keypoint positions") {
  const SimConfig cfg = short_track_config();
  const SimWorld w = generate_world(300.0, {}, cfg);
  const PanoramaRecord& rec = w.panos.records()[8];
  const CameraIntrinsics intr(320.0, 640, 480);
  const double heading = rec.vehicle_heading - 0.3;
  const double pitch = 0.0;

  const AnalyticImage img = render_view_gradient_image(w.scene, rec, heading, pitch, intr, cfg);
  const RenderedObservations obs =
      render_view_observations(w.scene, rec, heading, pitch, intr, cfg, 88);
  REQUIRE(!img.splats.empty());
  // The image keeps splats in a margin band around the frame (their tails still
  // shape the in-image field), so it may carry more splats than keypoints.
  REQUIRE(img.splats.size() >= obs.keypoints.size());

  // Every (noiseless) keypoint appears among the splats, in order; any splat
  // without a keypoint must lie outside the image proper.
  std::size_t si = 0;
  for (const KeyPoint& kp : obs.keypoints) {
    bool matched = false;
    while (si < img.splats.size()) {
      const ImageSplat& sp = img.splats[si++];
      if (std::abs(sp.u - kp.position.x) < 1e-9 && std::abs(sp.v - kp.position.y) < 1e-9) {
        matched = true;
        break;
      }
      const bool inside =
          sp.u >= 0.0 && sp.u < intr.width_px && sp.v >= 0.0 && sp.v < intr.height_px;
      CHECK_FALSE(inside);  // skipped splats are margin-band only
    }
    CHECK(matched);
  }
  // Trailing unmatched splats must also be margin-band.
  for (; si < img.splats.size(); ++si) {
    const ImageSplat& sp = img.splats[si];
    const bool inside =
        sp.u >= 0.0 && sp.u < intr.width_px && sp.v >= 0.0 && sp.v < intr.height_px;
    CHECK_FALSE(inside);
  }
}

// ---------------------------------------------------------------------------
// Sensor synthesis
// ---------------------------------------------------------------------------

TEST_CASE("noiseless IMU matches the analytic motion profile") {
  const SimConfig cfg = noiseless_config();
  const SimWorld w = generate_world(1000.0, {}, cfg);
  const auto imu = synthesize_imu(w.truth, cfg, 1);

  REQUIRE(imu.size() == 15901);  // floor(159 s * 100 Hz) + 1
  CHECK(imu.front().t == 0.0);
  CHECK(imu[1].t == doctest::Approx(0.01));

  auto sample_at = [&](double t) { return imu[std::size_t(std::lround(t * 100.0))]; };

  // Stationary: pure gravity reaction, silent gyro — exactly.
  for (double t : {0.0, 2.0, 4.5}) {
    const ImuSample s = sample_at(t);
    CHECK(s.accel == Vec3(0.0, 0.0, kStandardGravity));
    CHECK(s.gyro == Vec3::Zero());
  }
  // Constant-speed straight cruise: zero horizontal specific force.
  for (double t : {20.0, 30.0, 55.0}) {
    const ImuSample s = sample_at(t);
    CHECK(std::abs(s.accel.x()) < 1e-12);
    CHECK(std::abs(s.accel.y()) < 1e-12);
    CHECK(s.accel.z() == doctest::Approx(kStandardGravity).epsilon(1e-12));
    CHECK(s.gyro.norm() < 1e-12);
  }
  // Mid-acceleration: the configured limit shows up on body x.
  CHECK(sample_at(7.0).accel.x() == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("IMU signs through a left turn: positive yaw rate and leftward force") {
  const SimConfig cfg = noiseless_config();
  const std::vector<RouteTurn> turns = {{300.0, M_PI / 2.0}};
  const SimWorld w = generate_world(1000.0, turns, cfg);
  const auto imu = synthesize_imu(w.truth, cfg, 1);

  const double r = 5.0;
  const double s_mid = (300.0 - r) + r * M_PI / 4.0;  // mid-fillet arc length
  const double t_mid = time_at_arc_length(w.truth, s_mid);
  const ImuSample s = imu[std::size_t(std::lround(t_mid * 100.0))];

  const double v = 8.0;  // cruise through the corner
  const double kappa = 1.0 / r;
  // Body frame is x forward, y left, z up: a left turn is a positive yaw
  // rate and a positive (leftward) centripetal force.
  CHECK(s.gyro.z() == doctest::Approx(v * kappa).epsilon(1e-9));
  CHECK(s.gyro.x() == doctest::Approx(0.0).epsilon(1e-12).scale(1.0));
  CHECK(s.accel.y() == doctest::Approx(v * v * kappa).epsilon(1e-9));
  CHECK(s.accel.z() == doctest::Approx(kStandardGravity).epsilon(1e-12));
}

TEST_CASE("IMU noise and bias enter with the configured magnitudes") {
  SimConfig cfg = noiseless_config();
  cfg.noise.accel_bias = Vec3(0.02, -0.03, 0.01);
  cfg.noise.gyro_bias = Vec3(2e-4, -1e-4, 3e-4);
  cfg.noise.accel_noise_density = 2e-3;
  cfg.noise.gyro_noise_density = 2e-4;
  const SimWorld w = generate_world(1000.0, {}, cfg);
  const auto imu = synthesize_imu(w.truth, cfg, 33);

  // Average the stationary lead-in: the mean recovers the bias, the scatter
  // has the per-sample sigma = density * sqrt(rate).
  Vec3 mean_a = Vec3::Zero();
  Vec3 mean_g = Vec3::Zero();
  const int n = 500;
  for (int i = 0; i < n; ++i) {
    mean_a += imu[i].accel;
    mean_g += imu[i].gyro;
  }
  mean_a /= n;
  mean_g /= n;
  CHECK((mean_a - Vec3(0.02, -0.03, 0.01 + kStandardGravity)).norm() < 5e-3);
  CHECK((mean_g - Vec3(2e-4, -1e-4, 3e-4)).norm() < 5e-4);

  double var_ax = 0.0;
  for (int i = 0; i < n; ++i) var_ax += std::pow(imu[i].accel.x() - mean_a.x(), 2);
  var_ax /= n;
  const double sigma_sample = 2e-3 * std::sqrt(100.0);
  CHECK(std::sqrt(var_ax) == doctest::Approx(sigma_sample).epsilon(0.15));
}

TEST_CASE("noiseless GPS equals the true track at the configured rate") {
  const SimConfig cfg = noiseless_config();
  const SimWorld w = generate_world(1000.0, {}, cfg);
  const auto gps = synthesize_gps(w.truth, w.scene.frame, cfg, 2);
  REQUIRE(gps.size() == 160);  // floor(159 s * 1 Hz) + 1
  for (const GpsFix& f : gps) {
    const Vec2 en = w.scene.frame.to_local(f.position);
    const Vec3 q = w.truth.position_at(f.t);
    CHECK((en - Vec2(q.x(), q.y())).norm() < 1e-8);
    CHECK(f.sigma_m == doctest::Approx(1e-3));  // floor applied to sigma 0
  }
}

TEST_CASE("GPS noise is applied with the configured sigma") {
  SimConfig cfg = noiseless_config();
  cfg.noise.gps_sigma_m = 5.0;
  const SimWorld w = generate_world(1000.0, {}, cfg);
  const auto gps = synthesize_gps(w.truth, w.scene.frame, cfg, 6);
  double sum_sq = 0.0;
  for (const GpsFix& f : gps) {
    const Vec2 en = w.scene.frame.to_local(f.position);
    const Vec3 q = w.truth.position_at(f.t);
    sum_sq += (en - Vec2(q.x(), q.y())).squaredNorm();
    CHECK(f.sigma_m == doctest::Approx(5.0));
  }
  const double rms_per_axis = std::sqrt(sum_sq / (2.0 * gps.size()));
  CHECK(rms_per_axis > 3.5);
  CHECK(rms_per_axis < 6.5);
}

TEST_CASE("drift-free AR poses follow the true camera exactly") {
  const SimConfig cfg = noiseless_config();
  const SimWorld w = generate_world(1000.0, {}, cfg);
  const auto ar = synthesize_ar(w.truth, cfg, 3);
  REQUIRE(ar.size() == 1591);  // floor(159 s * 10 Hz) + 1
  for (std::size_t i = 0; i < ar.size(); i += 97) {
    const Pose cam = w.truth.camera_pose_at(ar[i].t);
    CHECK((ar[i].position - cam.translation()).norm() < 1e-9);
    const double align = std::abs(ar[i].rotation.dot(cam.rotation()));
    CHECK(align == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ar[i].tracked);
  }

  // ar_scale recovers inter-frame distances from the AR chain.
  for (std::size_t i = 101; i < 110; ++i) {
    const double scale = ar_scale(ar[i - 1], ar[i]);
    const double truth_d = (w.truth.camera_pose_at(ar[i].t).translation() -
                            w.truth.camera_pose_at(ar[i - 1].t).translation())
                               .norm();
    CHECK(std::abs(scale - truth_d) < 1e-9);
  }
}

TEST_CASE("AR drift bends the absolute track but keeps local scale metric") {
  SimConfig cfg = noiseless_config();
  cfg.noise.ar_drift_rad_per_m = 1e-4;
  const SimWorld w = generate_world(1000.0, {}, cfg);
  const auto ar = synthesize_ar(w.truth, cfg, 3);

  // Absolute positions bend away from truth as distance accumulates.
  const Pose cam_end = w.truth.camera_pose_at(ar.back().t);
  const double end_error = (ar.back().position - cam_end.translation()).norm();
  CHECK(end_error > 1.0);
  CHECK(end_error < 120.0);

  // Inter-frame distances stay exact: the drift is a pure rotation.
  for (std::size_t i = 501; i < 540; ++i) {
    const double d_ar = (ar[i].position - ar[i - 1].position).norm();
    const double d_truth = (w.truth.camera_pose_at(ar[i].t).translation() -
                            w.truth.camera_pose_at(ar[i - 1].t).translation())
                               .norm();
    CHECK(std::abs(d_ar - d_truth) < 1e-9);
  }
}

TEST_CASE("sensor streams are deterministic in the seed") {
  SimConfig cfg = standard_scenario();
  cfg.stops.clear();  // the standard stop sits beyond this short track
  const SimWorld w = generate_world(400.0, {}, cfg);
  const auto a = synthesize_imu(w.truth, cfg, 5);
  const auto b = synthesize_imu(w.truth, cfg, 5);
  const auto c = synthesize_imu(w.truth, cfg, 6);
  REQUIRE(a.size() == b.size());
  REQUIRE(a.size() == c.size());
  bool all_equal = true;
  bool any_diff_c = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    all_equal = all_equal && a[i].accel == b[i].accel && a[i].gyro == b[i].gyro;
    any_diff_c = any_diff_c || a[i].accel != c[i].accel;
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
}

// ---------------------------------------------------------------------------
// Scenario files
// ---------------------------------------------------------------------------

TEST_CASE("scenario JSON parses, converts units, and rejects unknown keys") {
  const std::string text = R"({
    "length_m": 600.0,
    "turns": [{"run_m": 250.0, "turn_deg": 90.0}],
    "stops": [{"at_s": 300.0, "duration_s": 8.0}],
    "cruise_speed_mps": 6.0,
    "origin_lat_deg": 34.0,
    "origin_lon_deg": -118.0,
    "noise": {"gps_sigma_m": 3.0, "master_seed": 11}
  })";
  const Scenario sc = scenario_from_json_text(text);
  CHECK(sc.length_m == 600.0);
  REQUIRE(sc.turns.size() == 1);
  CHECK(sc.turns[0].run_m == 250.0);
  CHECK(sc.turns[0].turn_rad == doctest::Approx(M_PI / 2.0).epsilon(1e-12));
  REQUIRE(sc.config.stops.size() == 1);
  CHECK(sc.config.stops[0].at_s == 300.0);
  CHECK(sc.config.stops[0].duration_s == 8.0);
  CHECK(sc.config.cruise_speed_mps == 6.0);
  CHECK(sc.config.noise.gps_sigma_m == 3.0);
  CHECK(sc.config.noise.master_seed == 11);
  CHECK(sc.config.origin.lat == 34.0);
  CHECK(sc.config.origin.lon == -118.0);
  // Untouched fields keep the standard-scenario defaults.
  CHECK(sc.config.noise.pixel_sigma_px == standard_scenario().noise.pixel_sigma_px);
  CHECK(sc.config.imu_rate_hz == standard_scenario().imu_rate_hz);

  CHECK_THROWS_AS(scenario_from_json_text("{\"lenght_m\": 100}"), IoError);
  CHECK_THROWS_AS(scenario_from_json_text("{\"noise\": {\"gps\": 1}}"), IoError);
  CHECK_THROWS_AS(scenario_from_json_text("not json"), IoError);
  CHECK_THROWS_AS(scenario_from_json_text("[1,2]"), IoError);
  CHECK_THROWS_AS(scenario_from_json_text("{\"turns\": [{\"run_m\": 1}]}"), IoError);
  CHECK_THROWS_AS(scenario_from_json_text("{\"noise\": {\"master_seed\": -3}}"), IoError);
  CHECK_THROWS_AS(scenario_from_json_text("{\"length_m\": 20}"), DomainError);
}

TEST_CASE("load_scenario reads a file and reports a missing one") {
  const std::string dir = svloc_test::temp_dir("sim_scenario");
  const std::string path = dir + "/scene.json";
  {
    std::ofstream f(path);
    f << R"({"length_m": 320.0, "stops": [], "noise": {"master_seed": 4}})";
  }
  const Scenario sc = load_scenario(path);
  CHECK(sc.length_m == 320.0);
  CHECK(sc.config.noise.master_seed == 4);
  const SimWorld w = generate_world(sc.length_m, sc.turns, sc.config);
  CHECK(w.panos.records().size() == 32);

  CHECK_THROWS_AS(load_scenario(dir + "/absent.json"), IoError);
}
