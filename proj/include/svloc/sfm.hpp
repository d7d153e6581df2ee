#pragma once

#include <optional>
#include <string>
#include <vector>

#include "svloc/geo.hpp"
#include "svloc/rng.hpp"
#include "svloc/trajectory.hpp"

namespace svloc {

/// Calibrated two-view correspondence: unit-depth camera-plane coordinates
/// ((u - cx)/f, (v - cy)/f) in each frame.
struct NormalizedCorrespondence {
  Vec2 y1 = Vec2::Zero();
  Vec2 y2 = Vec2::Zero();
};

/// Relative pose of frame 2 expressed in frame 1: X_1 = R * X_2 + t, with t
/// a unit direction (monocular scale is unobservable).
struct RelativePose {
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::UnitZ();
};

/// Normalized 8-point essential-matrix estimate. The result is rank-2 with
/// equal leading singular values, Frobenius norm 1, and a deterministic
/// sign (first nonzero entry positive). Throws ArityError for < 8
/// correspondences and DegenerateError when the design matrix is
/// rank-deficient (e.g. all points on a line).
Mat3 estimate_essential_8pt(const std::vector<NormalizedCorrespondence>& corrs);

/// Algebraic epipolar residual |y1^T E y2| with homogeneous (x, y, 1) rays.
double epipolar_residual(const Mat3& E, const NormalizedCorrespondence& c);

struct RansacEssentialResult {
  Mat3 E = Mat3::Zero();
  std::vector<char> inliers;  // one flag per input correspondence
};

/// RANSAC over 8-point hypotheses; the best consensus model is refit on its
/// inliers and the mask recomputed. Deterministic for a fixed RNG state.
/// Throws ConsensusError when no model reaches 8 inliers.
RansacEssentialResult ransac_essential(const std::vector<NormalizedCorrespondence>& corrs,
                                       int iterations, double threshold, Rng& rng);

/// Picks the one of the four (R, t) decompositions with maximal cheirality
/// support. Throws AmbiguousError when fewer than 75% of the
/// correspondences agree with the winner.
RelativePose decompose_essential(const Mat3& E,
                                 const std::vector<NormalizedCorrespondence>& corrs);

/// Linear (DLT) two-view triangulation in the world frame of the two poses.
/// Throws DegenerateError for a zero baseline or near-parallel rays.
Vec3 triangulate(const Pose& pose1, const Pose& pose2, const PixelCoord& x1,
                 const PixelCoord& x2, const CameraIntrinsics& intrinsics);
Vec3 triangulate_normalized(const Pose& pose1, const Pose& pose2, const Vec2& y1,
                            const Vec2& y2);

/// One visual-odometry chaining step: the relative pose (scaled by mu
/// meters) is appended to the running world-from-camera state.
Pose vo_accumulate(const Pose& state, const RelativePose& rel, double mu);

/// Metric step length from consecutive AR positions.
double ar_scale(const Vec3& ar_t_prev, const Vec3& ar_t_curr);
/// Same, from full AR poses; throws ScaleUnavailableError when either pose
/// lost tracking.
double ar_scale(const ArPose& prev, const ArPose& curr);

/// Tukey biweight loss (c^2/6)(1 - [1 - (r/c)^2]^3) for |r| <= c, else
/// c^2/6; and its IRLS weight loss'(r)/r.
double tukey_loss(double r, double c);
double tukey_weight(double r, double c);

struct PointOptimizeResult {
  std::vector<Vec3> points;
  std::vector<char> unobservable;  // near-singular information matrix
  double final_cost = 0.0;
  int iterations = 0;  // accepted improvement steps
  bool converged = false;
};

/// Refine 3-D points against bearing observations from fixed panorama
/// camera poses. observations[i][j] is the bearing of point i seen from
/// pose j (camera-frame elevation/azimuth); every point must be observed
/// from every pose. Levenberg-Marquardt on Tukey-robustified angular
/// residuals, azimuth wrapped to (-pi, pi].
PointOptimizeResult fixed_pose_point_optimize(const std::vector<Pose>& pano_poses,
                                              const std::vector<std::vector<SphericalAngle>>& observations,
                                              const std::vector<Vec3>& init_points);

struct PnpParams {
  int iterations = 200;
  double threshold_px = 2.0;
};

/// Camera pose from 3-D/2-D correspondences: RANSAC over DLT+LM hypotheses,
/// final refit on the consensus set. Throws ArityError (< 6 points),
/// DegenerateError (coplanar set), ConsensusError (no 6-inlier model).
/// `inlier_count`, when non-null, receives the final consensus size.
Pose pnp(const std::vector<Vec3>& points, const std::vector<PixelCoord>& pixels,
         const CameraIntrinsics& intrinsics, std::uint64_t seed, const PnpParams& params = {},
         int* inlier_count = nullptr);

struct LandmarkObservation {
  int camera_id = -1;
  std::optional<PixelCoord> pixel;
  std::optional<SphericalAngle> bearing;
};

struct Landmark {
  int id = -1;
  Vec3 position = Vec3::Zero();  // reference-panorama camera frame
  std::vector<LandmarkObservation> observations;
};

/// Pairwise reconstruction of vehicle-frame features against one panorama,
/// expressed in that panorama's camera frame.
struct PanoReconstruction {
  std::string pano_id;
  int camera_id = -1;
  Pose pano_pose;  // world-from-panorama-camera
  struct Entry {
    int key = -1;  // feature identity shared across panoramas
    Vec3 point = Vec3::Zero();
    PixelCoord pano_pixel;
    PixelCoord vehicle_pixel;
  };
  std::vector<Entry> entries;
};

struct MultiViewInitResult {
  std::vector<Landmark> landmarks;
  int reference_index = -1;  // into the input reconstruction list
};

/// Merge per-panorama reconstructions into landmarks in the frame of the
/// reference panorama (most matches, ties to the lowest id). Features seen
/// by fewer than `min_panoramas` panoramas are dropped; among a feature's
/// candidate positions the one with median L2 norm (index floor(k/2) after
/// sorting) is kept.
MultiViewInitResult multi_view_init(const std::vector<PanoReconstruction>& recons,
                                    int min_panoramas, int vehicle_camera_id);

enum class BaVertexKind { Free, Fixed, Bounded };

struct BaCamera {
  Pose pose;
  BaVertexKind kind = BaVertexKind::Free;
  double t_bound = 2.0;                 // per-axis meters (Bounded only)
  double r_bound = 2.0 * kPi / 180.0;   // total angle radians (Bounded only)
};

struct BaEdge {
  int camera = -1;
  int landmark = -1;
  bool is_bearing = false;
  PixelCoord pixel;         // valid when !is_bearing
  SphericalAngle bearing;   // valid when is_bearing
  double sigma = 1.0;       // px or radians
};

struct BaProblem {
  std::vector<BaCamera> cameras;
  std::vector<Vec3> points;
  std::vector<BaEdge> edges;
  CameraIntrinsics intrinsics;  // required when any pixel edge is present
  double tukey_c = 3.0;
  bool use_robust = true;
  // Optional Gaussian prior pulling Bounded cameras toward their initial
  // pose (an alternative to the hard box; off by default).
  bool pano_prior_enabled = false;
  double prior_sigma_t = 1.0;
  double prior_sigma_r = 1.0 * kPi / 180.0;
};

struct BaResult {
  BaProblem problem;  // refined copy
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;  // accepted improvement steps
  bool converged = false;
};

/// One observation linearized at (camera, point): residual
/// (predicted - measured) and Jacobians with respect to the camera-frame
/// rotation increment + camera center [dtheta, dC] and the world point.
/// `valid` is false behind the camera (pixel) or at a bearing singularity.
struct EdgeLinearization {
  bool valid = false;
  Vec2 residual = Vec2::Zero();
  Eigen::Matrix<double, 2, 6> J_camera = Eigen::Matrix<double, 2, 6>::Zero();
  Eigen::Matrix<double, 2, 3> J_point = Eigen::Matrix<double, 2, 3>::Zero();
};

EdgeLinearization linearize_edge(const BaEdge& edge, const Pose& camera, const Vec3& point,
                                 const CameraIntrinsics& intrinsics);

/// Robust local bundle adjustment. Fixed cameras are returned bit-exactly;
/// Bounded cameras stay inside their box around the initial pose (clamped
/// before each step is scored); Free cameras move without constraint.
/// `parallel` toggles OpenMP residual evaluation; results are identical
/// either way.
BaResult local_ba(const BaProblem& problem, bool parallel = true);

}  // namespace svloc
