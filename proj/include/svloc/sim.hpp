#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svloc/fusion.hpp"
#include "svloc/geo.hpp"
#include "svloc/matching.hpp"
#include "svloc/pano.hpp"
#include "svloc/trajectory.hpp"

namespace svloc {

/// Synthetic world generator: a road corridor flanked by two building
/// facades, a drive along it with stops, panoramas every few meters, and the
/// sensor streams a phone would record on that drive. Every generator is a
/// pure function of its inputs and a seed; identical calls are bit-identical.

// ---------------------------------------------------------------------------
// Scene

struct SceneLandmark {
  int id = -1;
  Vec3 position = Vec3::Zero();  // local ENU meters (east, north, up)
};

struct Scene {
  std::vector<SceneLandmark> landmarks;
  LocalFrame frame{LatLon(0.0, 0.0)};
};

// ---------------------------------------------------------------------------
// Ground truth

/// Constant-jerk phase of the speed profile. Within the phase, for
/// tau = t - t0: a = a0 + jerk*tau, v = v0 + a0*tau + jerk*tau^2/2,
/// s = s0 + v0*tau + a0*tau^2/2 + jerk*tau^3/6.
struct MotionPhase {
  double t0 = 0.0;
  double duration = 0.0;
  double s0 = 0.0;
  double v0 = 0.0;
  double a0 = 0.0;
  double jerk = 0.0;
};

/// Arc-length parameterized piece of the smooth (fillet-rounded) path in the
/// horizontal plane. Headings are anticlockwise from east (ENU x axis).
struct PathPiece {
  double s0 = 0.0;
  double length = 0.0;
  double curvature = 0.0;  // 1/m, positive = left turn; 0 = straight
  Vec2 start = Vec2::Zero();
  double heading0 = 0.0;
  Vec2 center = Vec2::Zero();  // arc center (unused for straights)
};

/// Timestamped vertex of the unrounded reference polyline.
struct TimedVertex {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
};

/// Ground-truth motion: a smooth analytic profile (for sensor synthesis and
/// exact pose queries) plus the unrounded piecewise-linear polyline the
/// evaluation compares against. The body frame is x forward, y left, z up;
/// the camera mount pose maps camera coordinates (x right, y down, z
/// forward) into the body frame.
struct GroundTruth {
  std::vector<TimedVertex> vertices;   // unrounded polyline, timestamped
  std::vector<MotionPhase> phases;     // speed profile, contiguous in time
  std::vector<PathPiece> path;         // smooth path, contiguous in s
  Pose mount;                          // body-from-camera
  double duration = 0.0;               // seconds
  double total_length = 0.0;           // smooth arc length, meters

  double arc_length_at(double t) const;
  double speed_at(double t) const;
  double accel_at(double t) const;  // tangential, right-continuous at kinks

  Vec3 position_at(double t) const;  // ground point on the centerline (z = 0)
  double heading_at(double t) const;  // anticlockwise from east
  double curvature_at(double t) const;

  Pose body_pose_at(double t) const;    // world-from-body
  Pose camera_pose_at(double t) const;  // world-from-camera

  /// The unrounded polyline as a timestamped trajectory (east/north only).
  Trajectory polyline() const;
};

// ---------------------------------------------------------------------------
// Configuration

struct NoiseConfig {
  double pixel_sigma_px = 1.0;
  double descriptor_sigma = 0.05;
  double outlier_fraction = 0.2;         // of emitted keypoints, in [0, 1)
  double pano_pos_sigma_m = 1.0;         // recorded-vs-true pano position
  double pano_heading_sigma_rad = 0.02;  // recorded-vs-true pano heading
  // Consumer-MEMS magnitudes: ~200 ug/sqrt(Hz) and ~0.011 (deg/s)/sqrt(Hz).
  double accel_noise_density = 2e-3;     // (m/s^2)/sqrt(Hz)
  double gyro_noise_density = 2e-4;      // (rad/s)/sqrt(Hz)
  Vec3 accel_bias = Vec3::Zero();        // m/s^2, body frame
  Vec3 gyro_bias = Vec3::Zero();         // rad/s, body frame
  double gps_sigma_m = 5.0;
  double gps_rate_hz = 1.0;
  double ar_drift_rad_per_m = 1e-4;  // heading drift; lateral m per m traveled
  std::uint64_t master_seed = 1;
};

/// A stop on the route: decelerate to rest so the vehicle is stationary at
/// smooth arc length `at_s`, wait, then accelerate back to cruise.
struct StopSpec {
  double at_s = 0.0;
  double duration_s = 0.0;
};

/// One route leg: drive `run_m` meters straight (measured along the
/// unrounded polyline from the previous corner), then turn by `turn_rad`
/// (positive = left). The final leg to the end of the track is implicit.
struct RouteTurn {
  double run_m = 0.0;
  double turn_rad = 0.0;
};

struct SimConfig {
  NoiseConfig noise;

  // Speed profile.
  double cruise_speed_mps = 8.0;
  double accel_limit_mps2 = 2.0;
  double jerk_ramp_s = 0.5;           // duration of each constant-jerk ramp
  double initial_stationary_s = 5.0;  // wait before moving off
  std::vector<StopSpec> stops;

  // Sensors.
  double imu_rate_hz = 100.0;
  double ar_rate_hz = 10.0;

  // World geometry.
  double corner_radius_m = 5.0;       // fillet radius at route corners
  double pano_spacing_m = 10.0;
  double pano_height_m = 2.5;
  double camera_height_m = 1.5;
  double landmark_spacing_m = 2.0;
  double facade_offset_left_m = 7.0;   // lateral distance, in [5, 30]
  double facade_offset_right_m = 15.0;
  double visibility_radius_m = 60.0;  // detection / splat range cutoff
  int descriptor_dim = 32;
  int pano_width_px = 1024;
  int pano_height_px = 512;
  LatLon origin = LatLon(34.0635, -118.4455);
};

/// The standard scenario: a straight 1 km track with a 20 s stop at midtrack
/// and the default noise model.
SimConfig standard_scenario();

/// Parse a scenario from JSON text. Recognized keys (all optional, defaults
/// from standard_scenario()): "length_m", "turns" (list of {"run_m",
/// "turn_deg"}), "stops" (list of {"at_s", "duration_s"}), "seed", "noise"
/// (object with NoiseConfig fields), and scalar overrides for the speed and
/// geometry fields above. Returns the config plus the track length and
/// turns. Throws IoError on malformed JSON or DomainError on bad values.
struct Scenario {
  double length_m = 1000.0;
  std::vector<RouteTurn> turns;
  SimConfig config;
};
Scenario scenario_from_json_text(const std::string& text);
Scenario load_scenario(const std::string& path);

// ---------------------------------------------------------------------------
// World generation

struct SimWorld {
  Scene scene;
  GroundTruth truth;
  PanoDatabase panos;
};

/// Build the corridor world: landmarks on both facades, the drive truth, and
/// a panorama database with one record every ~pano_spacing_m of road.
/// `length_m` is the total unrounded polyline length (pre: >= 50 m); `turns`
/// lists the corners in order (may be empty for a straight track).
/// Recorded panorama metadata is the true pose perturbed per config.noise;
/// true_pose keeps the exact value. Deterministic for a fixed seed.
SimWorld generate_world(double length_m, const std::vector<RouteTurn>& turns,
                        const SimConfig& config);

// ---------------------------------------------------------------------------
// Observation rendering

struct RenderedObservations {
  std::vector<KeyPoint> keypoints;
  std::vector<Descriptor> descriptors;
  /// Parallel to keypoints: scene landmark id, or -1 for an injected outlier.
  std::vector<int> landmark_ids;
};

/// Project scene landmarks through a camera at `camera_pose` (true pose,
/// world-from-camera): landmarks within the visibility radius and in front
/// of the camera land at project_point + N(0, pixel_sigma) per axis; points
/// outside the image after noise are dropped. Each landmark has a persistent
/// unit descriptor derived from (master_seed, landmark id); per-observation
/// noise sigma_d is added and the descriptor renormalized. Outliers with
/// uniform positions and random descriptors are appended so they make up
/// outlier_fraction of the result in expectation.
RenderedObservations render_observations(const Scene& scene, const Pose& camera_pose,
                                         const CameraIntrinsics& intrinsics,
                                         const SimConfig& config, std::uint64_t seed);

/// Same, for a virtual view of a panorama: keypoints land where the view
/// extraction actually renders the landmark's splat, i.e. the true direction
/// mapped through the *recorded* metadata the extractor believes. With zero
/// metadata noise this coincides with projection through the true view pose.
RenderedObservations render_view_observations(const Scene& scene, const PanoramaRecord& record,
                                              double view_heading, double view_pitch,
                                              const CameraIntrinsics& intrinsics,
                                              const SimConfig& config, std::uint64_t seed);

/// Analytic single-channel image: a sum of isotropic Gaussian splats with
/// closed-form value and gradient.
struct ImageSplat {
  double u = 0.0;
  double v = 0.0;
  double amplitude = 1.0;
};

struct AnalyticImage {
  std::vector<ImageSplat> splats;
  double sigma_px = 3.0;
  int width = 0;
  int height = 0;

  double value(double x, double y) const;
  Vec2 gradient(double x, double y) const;
  /// Wrap as a matching-layer gradient field (shares the splat list).
  GradientField field() const;
};

/// Splat image of the scene as seen from `camera_pose`: one Gaussian
/// (sigma = 3 px) per visible landmark at its exact projection.
AnalyticImage render_gradient_image(const Scene& scene, const Pose& camera_pose,
                                    const CameraIntrinsics& intrinsics,
                                    const SimConfig& config);
GradientField render_gradient_field(const Scene& scene, const Pose& camera_pose,
                                    const CameraIntrinsics& intrinsics,
                                    const SimConfig& config);

/// Splat image for a panorama view (splats at the same apparent positions
/// render_view_observations uses, without noise).
AnalyticImage render_view_gradient_image(const Scene& scene, const PanoramaRecord& record,
                                         double view_heading, double view_pitch,
                                         const CameraIntrinsics& intrinsics,
                                         const SimConfig& config);

// ---------------------------------------------------------------------------
// Sensor synthesis

/// Body-frame specific force (including the gravity reaction) and angular
/// rate sampled at config.imu_rate_hz from t = 0 through the end of the
/// drive, plus constant biases and white noise of the configured densities.
std::vector<ImuSample> synthesize_imu(const GroundTruth& truth, const SimConfig& config,
                                      std::uint64_t seed);

/// GPS fixes at config.noise.gps_rate_hz: truth position plus horizontal
/// Gaussian noise, reported in geographic coordinates of `frame` with
/// sigma_m = max(gps_sigma_m, 1e-3). Pre: rate <= IMU rate.
std::vector<GpsFix> synthesize_gps(const GroundTruth& truth, const LocalFrame& frame,
                                   const SimConfig& config, std::uint64_t seed);

/// AR tracker poses (camera frame) at config.ar_rate_hz. Increments of the
/// true camera trajectory are accumulated under a yaw drift that grows by
/// ar_drift_rad_per_m per meter traveled, so relative distances stay exact
/// (locally metric) while absolute position slowly bends away from truth.
std::vector<ArPose> synthesize_ar(const GroundTruth& truth, const SimConfig& config,
                                  std::uint64_t seed);

}  // namespace svloc
