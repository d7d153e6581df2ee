#include "svloc/sfm.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "svloc/error.hpp"

namespace svloc {

double tukey_loss(double r, double c) {
  if (!(c > 0.0)) throw DomainError("Tukey scale must be positive");
  const double a = std::abs(r);
  if (a >= c) return c * c / 6.0;
  const double u = 1.0 - (a / c) * (a / c);
  return c * c / 6.0 * (1.0 - u * u * u);
}

double tukey_weight(double r, double c) {
  if (!(c > 0.0)) throw DomainError("Tukey scale must be positive");
  const double a = std::abs(r);
  if (a >= c) return 0.0;
  const double u = 1.0 - (a / c) * (a / c);
  return u * u;
}

namespace {

constexpr double kInvalidEdgePenalty = 1e30;

EdgeLinearization evaluate_edge(const BaEdge& edge, const Pose& camera, const Vec3& point,
                                const CameraIntrinsics* intrinsics, bool with_jacobians) {
  EdgeLinearization out;
  // Mirror project_point / bearing_to_point arithmetic exactly so that an
  // edge evaluated at the pose and point its measurement was generated from
  // yields a bitwise-zero residual (and hence a zero gradient).
  const Vec3 Xc = camera.inverse_transform(point);
  const double x = Xc.x();
  const double y = Xc.y();
  const double z = Xc.z();

  Eigen::Matrix<double, 2, 3> J_xc = Eigen::Matrix<double, 2, 3>::Zero();
  if (!edge.is_bearing) {
    if (!(z > 1e-9)) return out;
    const double f = intrinsics->focal_px;
    const double u = intrinsics->cx() + f * x / z;
    const double v = intrinsics->cy() + f * y / z;
    out.residual = Vec2(u - edge.pixel.x, v - edge.pixel.y);
    if (with_jacobians) {
      J_xc << f / z, 0.0, -f * x / (z * z),  //
          0.0, f / z, -f * y / (z * z);
    }
  } else {
    const double rho2 = x * x + z * z;
    const double r2 = rho2 + y * y;
    if (rho2 < 1e-24 || r2 < 1e-18) return out;
    const double theta = std::atan2(-y, std::hypot(x, z));
    const double phi = std::atan2(x, z);
    out.residual = Vec2(theta - edge.bearing.theta, wrap_pi(phi - edge.bearing.phi));
    if (with_jacobians) {
      const double rho = std::sqrt(rho2);
      J_xc << x * y / (rho * r2), -rho / r2, z * y / (rho * r2),  //
          z / rho2, 0.0, -x / rho2;
    }
  }
  if (with_jacobians) {
    const Mat3 Rcw = camera.rotation_matrix().transpose();
    Mat3 skew;
    skew << 0.0, -z, y,  //
        z, 0.0, -x,      //
        -y, x, 0.0;
    out.J_camera.leftCols<3>() = J_xc * skew;
    out.J_camera.rightCols<3>() = -(J_xc * Rcw);
    out.J_point = J_xc * Rcw;
  }
  out.valid = true;
  return out;
}

struct LmState {
  std::vector<Pose> cameras;
  std::vector<Vec3> points;
};

struct LmProblem {
  const std::vector<BaCamera>* cameras = nullptr;
  const std::vector<BaEdge>* edges = nullptr;
  std::vector<char> point_free;
  const CameraIntrinsics* intrinsics = nullptr;
  double tukey_c = 3.0;
  bool use_robust = true;
  bool prior_enabled = false;
  double prior_sigma_t = 1.0;
  double prior_sigma_r = 1.0;
  bool parallel = true;
};

struct LmLayout {
  std::vector<int> camera_offset;  // -1 when the vertex is Fixed
  std::vector<int> point_offset;   // -1 when the point is held constant
  int size = 0;
};

LmLayout make_layout(const LmProblem& problem) {
  LmLayout layout;
  layout.camera_offset.assign(problem.cameras->size(), -1);
  layout.point_offset.assign(problem.point_free.size(), -1);
  int offset = 0;
  for (std::size_t i = 0; i < problem.cameras->size(); ++i) {
    if ((*problem.cameras)[i].kind != BaVertexKind::Fixed) {
      layout.camera_offset[i] = offset;
      offset += 6;
    }
  }
  for (std::size_t j = 0; j < problem.point_free.size(); ++j) {
    if (problem.point_free[j]) {
      layout.point_offset[j] = offset;
      offset += 3;
    }
  }
  layout.size = offset;
  return layout;
}

double edge_weight(const BaEdge& edge) { return 1.0 / (edge.sigma * edge.sigma); }

double robust_cost(double r_norm, double weight, const LmProblem& problem) {
  if (problem.use_robust) return weight * tukey_loss(r_norm, problem.tukey_c);
  return 0.5 * weight * r_norm * r_norm;
}

double robust_omega(double r_norm, double weight, const LmProblem& problem) {
  if (problem.use_robust) return weight * tukey_weight(r_norm, problem.tukey_c);
  return weight;
}

double prior_cost(const LmProblem& problem, const LmState& state, const LmState& initial) {
  if (!problem.prior_enabled) return 0.0;
  const double wt = 1.0 / (problem.prior_sigma_t * problem.prior_sigma_t);
  const double wr = 1.0 / (problem.prior_sigma_r * problem.prior_sigma_r);
  double total = 0.0;
  for (std::size_t i = 0; i < problem.cameras->size(); ++i) {
    if ((*problem.cameras)[i].kind != BaVertexKind::Bounded) continue;
    const Vec3 rt = state.cameras[i].translation() - initial.cameras[i].translation();
    const Vec3 rr =
        quat_log(initial.cameras[i].rotation().conjugate() * state.cameras[i].rotation());
    total += 0.5 * (wt * rt.squaredNorm() + wr * rr.squaredNorm());
  }
  return total;
}

double evaluate_cost(const LmProblem& problem, const LmState& state, const LmState& initial) {
  const auto& edges = *problem.edges;
  std::vector<double> costs(edges.size(), 0.0);
  const bool parallel = problem.parallel;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(edges.size()); ++k) {
    const BaEdge& edge = edges[static_cast<std::size_t>(k)];
    const EdgeLinearization term =
        evaluate_edge(edge, state.cameras[static_cast<std::size_t>(edge.camera)],
                      state.points[static_cast<std::size_t>(edge.landmark)],
                      problem.intrinsics, false);
    costs[static_cast<std::size_t>(k)] =
        term.valid ? robust_cost(term.residual.norm(), edge_weight(edge), problem)
                   : kInvalidEdgePenalty;
  }
  double total = 0.0;
  for (double c : costs) total += c;  // fixed order regardless of thread count
  return total + prior_cost(problem, state, initial);
}

void build_normal_equations(const LmProblem& problem, const LmState& state,
                            const LmState& initial, const LmLayout& layout,
                            Eigen::MatrixXd& H, Eigen::VectorXd& g) {
  const auto& edges = *problem.edges;
  std::vector<EdgeLinearization> terms(edges.size());
  const bool parallel = problem.parallel;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::ptrdiff_t k = 0; k < static_cast<std::ptrdiff_t>(edges.size()); ++k) {
    const BaEdge& edge = edges[static_cast<std::size_t>(k)];
    terms[static_cast<std::size_t>(k)] =
        evaluate_edge(edge, state.cameras[static_cast<std::size_t>(edge.camera)],
                      state.points[static_cast<std::size_t>(edge.landmark)],
                      problem.intrinsics, true);
  }

  H.setZero(layout.size, layout.size);
  g.setZero(layout.size);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const BaEdge& edge = edges[k];
    const EdgeLinearization& term = terms[k];
    if (!term.valid) continue;  // penalized in the cost, no gradient
    const double omega = robust_omega(term.residual.norm(), edge_weight(edge), problem);
    if (omega <= 0.0) continue;
    const int co = layout.camera_offset[static_cast<std::size_t>(edge.camera)];
    const int po = layout.point_offset[static_cast<std::size_t>(edge.landmark)];
    if (co >= 0) {
      g.segment<6>(co) += omega * (term.J_camera.transpose() * term.residual);
      H.block<6, 6>(co, co) += omega * (term.J_camera.transpose() * term.J_camera);
    }
    if (po >= 0) {
      g.segment<3>(po) += omega * (term.J_point.transpose() * term.residual);
      H.block<3, 3>(po, po) += omega * (term.J_point.transpose() * term.J_point);
    }
    if (co >= 0 && po >= 0) {
      const Eigen::Matrix<double, 6, 3> B =
          omega * (term.J_camera.transpose() * term.J_point);
      H.block<6, 3>(co, po) += B;
      H.block<3, 6>(po, co) += B.transpose();
    }
  }

  if (problem.prior_enabled) {
    const double wt = 1.0 / (problem.prior_sigma_t * problem.prior_sigma_t);
    const double wr = 1.0 / (problem.prior_sigma_r * problem.prior_sigma_r);
    for (std::size_t i = 0; i < problem.cameras->size(); ++i) {
      if ((*problem.cameras)[i].kind != BaVertexKind::Bounded) continue;
      const int co = layout.camera_offset[i];
      if (co < 0) continue;
      const Vec3 rt = state.cameras[i].translation() - initial.cameras[i].translation();
      const Vec3 rr =
          quat_log(initial.cameras[i].rotation().conjugate() * state.cameras[i].rotation());
      // Small-angle approximation: d Log(q0^-1 q Exp(dtheta)) / d dtheta ~ I.
      g.segment<3>(co) += wr * rr;
      H.block<3, 3>(co, co) += wr * Mat3::Identity();
      g.segment<3>(co + 3) += wt * rt;
      H.block<3, 3>(co + 3, co + 3) += wt * Mat3::Identity();
    }
  }
}

LmState retract(const LmProblem& problem, const LmState& state, const LmLayout& layout,
                const Eigen::VectorXd& delta) {
  LmState next = state;
  for (std::size_t i = 0; i < problem.cameras->size(); ++i) {
    const int co = layout.camera_offset[i];
    if (co < 0) continue;
    const Vec3 dtheta = delta.segment<3>(co);
    const Vec3 dC = delta.segment<3>(co + 3);
    const Quat q = (state.cameras[i].rotation() * quat_exp(dtheta)).normalized();
    next.cameras[i] = Pose(q, Vec3(state.cameras[i].translation() + dC));
  }
  for (std::size_t j = 0; j < problem.point_free.size(); ++j) {
    const int po = layout.point_offset[j];
    if (po < 0) continue;
    next.points[j] = state.points[j] + delta.segment<3>(po);
  }
  return next;
}

/// Project Bounded cameras back into their box around the initial pose:
/// per-axis translation clamp, total-angle rotation clamp.
void clamp_bounded(const LmProblem& problem, const LmState& initial, LmState& state) {
  for (std::size_t i = 0; i < problem.cameras->size(); ++i) {
    const BaCamera& cam = (*problem.cameras)[i];
    if (cam.kind != BaVertexKind::Bounded) continue;
    const Vec3 t0 = initial.cameras[i].translation();
    Vec3 t = state.cameras[i].translation();
    for (int a = 0; a < 3; ++a) {
      t[a] = std::clamp(t[a], t0[a] - cam.t_bound, t0[a] + cam.t_bound);
    }
    const Quat q0 = initial.cameras[i].rotation();
    Quat q = state.cameras[i].rotation();
    Vec3 rv = quat_log(q0.conjugate() * q);
    const double angle = rv.norm();
    if (angle > cam.r_bound) {
      rv *= cam.r_bound / angle;
      q = (q0 * quat_exp(rv)).normalized();
    }
    state.cameras[i] = Pose(q, t);
  }
}

struct LmReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;  // accepted improvement steps
  bool converged = false;
};

LmReport lm_optimize(const LmProblem& problem, LmState& state) {
  const LmLayout layout = make_layout(problem);
  const LmState initial = state;
  double cost = evaluate_cost(problem, state, initial);
  LmReport report;
  report.initial_cost = cost;
  report.final_cost = cost;
  if (layout.size == 0) {
    report.converged = true;
    return report;
  }

  Eigen::MatrixXd H;
  Eigen::VectorXd g;
  double lambda = 1e-3;
  int outer = 0;
  while (outer < 100) {
    ++outer;
    build_normal_equations(problem, state, initial, layout, H, g);
    if (g.lpNorm<Eigen::Infinity>() < 1e-14) {
      report.converged = true;
      break;
    }
    // Marquardt damping scales with the diagonal, which keeps the solve
    // path invariant under a global rescaling of the measurement sigmas.
    const Eigen::VectorXd scale = H.diagonal().cwiseMax(1e-12);
    bool accepted = false;
    while (true) {
      Eigen::MatrixXd damped = H;
      damped.diagonal() += lambda * scale;
      const Eigen::VectorXd delta = damped.ldlt().solve(-g);
      if (delta.allFinite()) {
        LmState candidate = retract(problem, state, layout, delta);
        clamp_bounded(problem, initial, candidate);
        const double new_cost = evaluate_cost(problem, candidate, initial);
        if (new_cost <= cost) {
          const double rel = (cost - new_cost) / std::max(cost, 1e-300);
          state = std::move(candidate);
          cost = new_cost;
          lambda = std::max(lambda * 0.1, 1e-12);
          accepted = true;
          ++report.iterations;
          if (rel < 1e-10) report.converged = true;
          break;
        }
      }
      lambda *= 10.0;
      if (lambda > 1e12) break;
    }
    if (!accepted || report.converged) break;
  }
  report.final_cost = cost;
  return report;
}

void validate_edges(const std::vector<BaEdge>& edges, std::size_t n_cameras,
                    std::size_t n_points, const CameraIntrinsics* intrinsics) {
  for (const BaEdge& edge : edges) {
    if (edge.camera < 0 || edge.camera >= static_cast<int>(n_cameras)) {
      throw DomainError("edge camera index out of range");
    }
    if (edge.landmark < 0 || edge.landmark >= static_cast<int>(n_points)) {
      throw DomainError("edge landmark index out of range");
    }
    if (!(edge.sigma > 0.0)) throw DomainError("edge sigma must be positive");
    if (!edge.is_bearing &&
        (intrinsics == nullptr || !(intrinsics->focal_px > 0.0))) {
      throw DomainError("pixel edges require valid camera intrinsics");
    }
  }
}

}  // namespace

EdgeLinearization linearize_edge(const BaEdge& edge, const Pose& camera, const Vec3& point,
                                 const CameraIntrinsics& intrinsics) {
  return evaluate_edge(edge, camera, point, &intrinsics, true);
}

PointOptimizeResult fixed_pose_point_optimize(const std::vector<Pose>& pano_poses,
                                              const std::vector<std::vector<SphericalAngle>>& observations,
                                              const std::vector<Vec3>& init_points) {
  if (pano_poses.empty()) throw DomainError("point optimization needs at least one pose");
  if (observations.size() != init_points.size()) {
    throw DomainError("observation rows must match initial points");
  }
  PointOptimizeResult result;
  if (init_points.empty()) {
    result.converged = true;
    return result;
  }
  for (const auto& row : observations) {
    if (row.size() != pano_poses.size()) {
      throw DomainError("every point must be observed from every pose");
    }
  }

  std::vector<BaCamera> cameras(pano_poses.size());
  for (std::size_t j = 0; j < pano_poses.size(); ++j) {
    cameras[j].pose = pano_poses[j];
    cameras[j].kind = BaVertexKind::Fixed;
  }
  std::vector<BaEdge> edges;
  edges.reserve(init_points.size() * pano_poses.size());
  for (std::size_t i = 0; i < init_points.size(); ++i) {
    for (std::size_t j = 0; j < pano_poses.size(); ++j) {
      BaEdge edge;
      edge.camera = static_cast<int>(j);
      edge.landmark = static_cast<int>(i);
      edge.is_bearing = true;
      edge.bearing = observations[i][j];
      edge.sigma = 1.0;
      edges.push_back(edge);
    }
  }

  LmProblem problem;
  problem.cameras = &cameras;
  problem.edges = &edges;
  problem.point_free.assign(init_points.size(), 1);
  problem.intrinsics = nullptr;
  problem.tukey_c = 3.0;
  problem.use_robust = true;

  LmState state;
  state.cameras = pano_poses;
  state.points = init_points;
  const LmReport report = lm_optimize(problem, state);

  result.points = state.points;
  result.final_cost = report.final_cost;
  result.iterations = report.iterations;
  result.converged = report.converged;

  // A point is unobservable when its information matrix is (near-)singular,
  // e.g. bearings from a single panorama constrain only two of three axes.
  result.unobservable.assign(init_points.size(), 0);
  std::vector<Mat3> info(init_points.size(), Mat3::Zero());
  for (const BaEdge& edge : edges) {
    const EdgeLinearization term =
        evaluate_edge(edge, state.cameras[static_cast<std::size_t>(edge.camera)],
                      state.points[static_cast<std::size_t>(edge.landmark)], nullptr, true);
    if (!term.valid) continue;
    const double omega = robust_omega(term.residual.norm(), edge_weight(edge), problem);
    info[static_cast<std::size_t>(edge.landmark)] +=
        omega * (term.J_point.transpose() * term.J_point);
  }
  for (std::size_t i = 0; i < info.size(); ++i) {
    Eigen::SelfAdjointEigenSolver<Mat3> eig(info[i]);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (hi < 1e-12 || lo < 1e-10 * hi) result.unobservable[i] = 1;
  }
  return result;
}

namespace {

/// Direct linear transform for a projective camera from >= 6 world/pixel
/// pairs, with Hartley normalization on both sides. Returns nothing when the
/// system is rank-deficient or the recovered matrix is not a proper camera.
std::optional<Pose> dlt_pose(const std::vector<Vec3>& points, const std::vector<Vec2>& rays,
                             const std::vector<int>& subset) {
  const std::size_t m = subset.size();
  Vec3 c3 = Vec3::Zero();
  Vec2 c2 = Vec2::Zero();
  for (int idx : subset) {
    c3 += points[static_cast<std::size_t>(idx)];
    c2 += rays[static_cast<std::size_t>(idx)];
  }
  c3 /= static_cast<double>(m);
  c2 /= static_cast<double>(m);
  double rms3 = 0.0;
  double rms2 = 0.0;
  for (int idx : subset) {
    rms3 += (points[static_cast<std::size_t>(idx)] - c3).squaredNorm();
    rms2 += (rays[static_cast<std::size_t>(idx)] - c2).squaredNorm();
  }
  rms3 = std::sqrt(rms3 / static_cast<double>(m));
  rms2 = std::sqrt(rms2 / static_cast<double>(m));
  if (rms3 < 1e-12) return std::nullopt;
  const double s3 = std::sqrt(3.0) / rms3;
  const double s2 = rms2 > 1e-12 ? std::sqrt(2.0) / rms2 : 1.0;

  Eigen::MatrixXd A(2 * static_cast<Eigen::Index>(m), 12);
  for (std::size_t r = 0; r < m; ++r) {
    const Vec3 X = s3 * (points[static_cast<std::size_t>(subset[r])] - c3);
    const Vec2 u = s2 * (rays[static_cast<std::size_t>(subset[r])] - c2);
    A.row(2 * static_cast<Eigen::Index>(r)) << X.x(), X.y(), X.z(), 1.0, 0.0, 0.0, 0.0, 0.0,
        -u.x() * X.x(), -u.x() * X.y(), -u.x() * X.z(), -u.x();
    A.row(2 * static_cast<Eigen::Index>(r) + 1) << 0.0, 0.0, 0.0, 0.0, X.x(), X.y(), X.z(),
        1.0, -u.y() * X.x(), -u.y() * X.y(), -u.y() * X.z(), -u.y();
  }
  // Full V keeps the null-space column available even for the minimal
  // 12-equation system.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(0) <= 0.0 || sv(10) / sv(0) < 1e-10) return std::nullopt;
  const Eigen::VectorXd p = svd.matrixV().col(11);
  Eigen::Matrix<double, 3, 4> Pn;
  Pn << p(0), p(1), p(2), p(3), p(4), p(5), p(6), p(7), p(8), p(9), p(10), p(11);

  // Undo the similarity normalizations: rays' = U2 rays, X' = T3 X.
  Mat3 U2_inv = Mat3::Identity();
  U2_inv(0, 0) = 1.0 / s2;
  U2_inv(1, 1) = 1.0 / s2;
  U2_inv(0, 2) = c2.x();
  U2_inv(1, 2) = c2.y();
  Eigen::Matrix4d T3 = Eigen::Matrix4d::Identity();
  T3.topLeftCorner<3, 3>() = s3 * Mat3::Identity();
  T3.topRightCorner<3, 1>() = -s3 * c3;
  Eigen::Matrix<double, 3, 4> P = U2_inv * Pn * T3;

  Mat3 A3 = P.leftCols<3>();
  double det = A3.determinant();
  if (std::abs(det) < 1e-14) return std::nullopt;
  if (det < 0.0) {
    P = -P;
    A3 = -A3;
  }
  Eigen::JacobiSVD<Mat3> rsvd(A3, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 Rcw = rsvd.matrixU() * rsvd.matrixV().transpose();
  const double scale = rsvd.singularValues().mean();
  if (scale < 1e-12) return std::nullopt;
  const Vec3 tc = P.col(3) / scale;
  return Pose(Mat3(Rcw.transpose()), Vec3(-Rcw.transpose() * tc));
}

/// Squared-loss pose-only refinement against pixel observations.
Pose polish_pose(const Pose& init, const std::vector<Vec3>& points,
                 const std::vector<PixelCoord>& pixels, const std::vector<int>& subset,
                 const CameraIntrinsics& intrinsics) {
  std::vector<BaCamera> cameras(1);
  cameras[0].pose = init;
  cameras[0].kind = BaVertexKind::Free;
  std::vector<Vec3> sub_points;
  std::vector<BaEdge> edges;
  sub_points.reserve(subset.size());
  edges.reserve(subset.size());
  for (int idx : subset) {
    BaEdge edge;
    edge.camera = 0;
    edge.landmark = static_cast<int>(sub_points.size());
    edge.is_bearing = false;
    edge.pixel = pixels[static_cast<std::size_t>(idx)];
    edge.sigma = 1.0;
    edges.push_back(edge);
    sub_points.push_back(points[static_cast<std::size_t>(idx)]);
  }

  LmProblem problem;
  problem.cameras = &cameras;
  problem.edges = &edges;
  problem.point_free.assign(sub_points.size(), 0);  // structure is known
  problem.intrinsics = &intrinsics;
  problem.use_robust = false;
  problem.parallel = false;

  LmState state;
  state.cameras = {init};
  state.points = sub_points;
  lm_optimize(problem, state);
  return state.cameras[0];
}

double reprojection_error(const Pose& pose, const Vec3& point, const PixelCoord& pixel,
                          const CameraIntrinsics& intrinsics) {
  const Vec3 Xc = pose.rotation_matrix().transpose() * (point - pose.translation());
  if (!(Xc.z() > 1e-9)) return std::numeric_limits<double>::infinity();
  const double f = intrinsics.focal_px;
  const double du = intrinsics.cx() + f * Xc.x() / Xc.z() - pixel.x;
  const double dv = intrinsics.cy() + f * Xc.y() / Xc.z() - pixel.y;
  return std::hypot(du, dv);
}

/// sigma_min/sigma_max of the centered point cloud; small means coplanar.
double planarity_ratio(const std::vector<Vec3>& points, const std::vector<int>& subset) {
  Vec3 centroid = Vec3::Zero();
  for (int idx : subset) centroid += points[static_cast<std::size_t>(idx)];
  centroid /= static_cast<double>(subset.size());
  Eigen::MatrixXd M(3, static_cast<Eigen::Index>(subset.size()));
  for (std::size_t i = 0; i < subset.size(); ++i) {
    M.col(static_cast<Eigen::Index>(i)) = points[static_cast<std::size_t>(subset[i])] - centroid;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(M);
  const auto& sv = svd.singularValues();
  if (sv(0) <= 0.0) return 0.0;
  return sv(2) / sv(0);
}

}  // namespace

Pose pnp(const std::vector<Vec3>& points, const std::vector<PixelCoord>& pixels,
         const CameraIntrinsics& intrinsics, std::uint64_t seed, const PnpParams& params,
         int* inlier_count) {
  if (points.size() != pixels.size()) {
    throw DomainError("PnP needs one pixel per 3-D point");
  }
  if (points.size() < 6) {
    throw ArityError("PnP needs at least 6 points, got " + std::to_string(points.size()));
  }
  if (params.iterations <= 0 || !(params.threshold_px > 0.0)) {
    throw DomainError("PnP RANSAC parameters must be positive");
  }
  if (!(intrinsics.focal_px > 0.0)) throw DomainError("PnP needs valid intrinsics");

  const int n = static_cast<int>(points.size());
  std::vector<int> all(points.size());
  for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  if (planarity_ratio(points, all) < 1e-9) {
    throw DegenerateError("PnP point set is coplanar");
  }

  std::vector<Vec2> rays(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    rays[i] = Vec2((pixels[i].x - intrinsics.cx()) / intrinsics.focal_px,
                   (pixels[i].y - intrinsics.cy()) / intrinsics.focal_px);
  }

  Rng rng(seed);
  std::vector<char> best_mask(points.size(), 0);
  int best_count = -1;
  for (int it = 0; it < params.iterations; ++it) {
    const std::vector<int> sample = rng.sample_distinct(n, 6);
    if (planarity_ratio(points, sample) < 1e-9) continue;
    const std::optional<Pose> hypothesis = dlt_pose(points, rays, sample);
    if (!hypothesis) continue;
    // Six points overdetermine the 11-DOF camera only barely; the linear
    // estimate needs a nonlinear polish before it can score consensus.
    const Pose refined = polish_pose(*hypothesis, points, pixels, sample, intrinsics);
    std::vector<char> mask(points.size(), 0);
    int count = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (reprojection_error(refined, points[i], pixels[i], intrinsics) <
          params.threshold_px) {
        mask[i] = 1;
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best_mask = mask;
    }
  }
  if (best_count < 6) {
    throw ConsensusError("PnP found only " + std::to_string(std::max(best_count, 0)) +
                         " inliers (need 6)");
  }

  std::vector<int> consensus;
  consensus.reserve(static_cast<std::size_t>(best_count));
  for (int i = 0; i < n; ++i) {
    if (best_mask[static_cast<std::size_t>(i)]) consensus.push_back(i);
  }
  std::optional<Pose> final_init;
  if (planarity_ratio(points, consensus) >= 1e-9) {
    final_init = dlt_pose(points, rays, consensus);
  }
  Pose final_pose = polish_pose(final_init ? *final_init : Pose::identity(), points, pixels,
                                consensus, intrinsics);
  if (inlier_count != nullptr) {
    int count = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (reprojection_error(final_pose, points[i], pixels[i], intrinsics) <
          params.threshold_px) {
        ++count;
      }
    }
    *inlier_count = count;
  }
  return final_pose;
}

MultiViewInitResult multi_view_init(const std::vector<PanoReconstruction>& recons,
                                    int min_panoramas, int vehicle_camera_id) {
  if (recons.empty()) {
    throw ArityError("multi-view initialization needs at least one reconstruction");
  }
  if (min_panoramas < 1) throw DomainError("min_panoramas must be at least 1");

  int reference = 0;
  for (std::size_t p = 1; p < recons.size(); ++p) {
    const bool more = recons[p].entries.size() > recons[static_cast<std::size_t>(reference)].entries.size();
    const bool tie_lower = recons[p].entries.size() ==
                               recons[static_cast<std::size_t>(reference)].entries.size() &&
                           recons[p].pano_id < recons[static_cast<std::size_t>(reference)].pano_id;
    if (more || tie_lower) reference = static_cast<int>(p);
  }
  const Pose& ref_pose = recons[static_cast<std::size_t>(reference)].pano_pose;

  struct Candidate {
    Vec3 position;
    double norm;
    std::size_t order;
    int camera_id;
    PixelCoord pano_pixel;
    PixelCoord vehicle_pixel;
  };
  std::map<int, std::vector<Candidate>> by_key;
  for (std::size_t p = 0; p < recons.size(); ++p) {
    std::map<int, int> seen;
    for (const auto& entry : recons[p].entries) {
      if (++seen[entry.key] > 1) {
        throw DomainError("duplicate feature key " + std::to_string(entry.key) +
                          " in reconstruction " + recons[p].pano_id);
      }
      Candidate cand;
      cand.position = ref_pose.inverse_transform(recons[p].pano_pose.transform(entry.point));
      cand.norm = cand.position.norm();
      cand.order = p;
      cand.camera_id = recons[p].camera_id;
      cand.pano_pixel = entry.pano_pixel;
      cand.vehicle_pixel = entry.vehicle_pixel;
      by_key[entry.key].push_back(cand);
    }
  }

  MultiViewInitResult result;
  result.reference_index = reference;
  for (const auto& [key, candidates] : by_key) {
    if (static_cast<int>(candidates.size()) < min_panoramas) continue;
    std::vector<std::size_t> order(candidates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      if (candidates[a].norm != candidates[b].norm) {
        return candidates[a].norm < candidates[b].norm;
      }
      return candidates[a].order < candidates[b].order;
    });
    const Candidate& median = candidates[order[candidates.size() / 2]];

    Landmark landmark;
    landmark.id = key;
    landmark.position = median.position;
    LandmarkObservation vehicle_obs;
    vehicle_obs.camera_id = vehicle_camera_id;
    vehicle_obs.pixel = candidates.front().vehicle_pixel;
    landmark.observations.push_back(vehicle_obs);
    for (const Candidate& cand : candidates) {
      LandmarkObservation obs;
      obs.camera_id = cand.camera_id;
      obs.pixel = cand.pano_pixel;
      landmark.observations.push_back(obs);
    }
    result.landmarks.push_back(std::move(landmark));
  }
  return result;
}

BaResult local_ba(const BaProblem& problem, bool parallel) {
  if (problem.cameras.empty()) throw DomainError("bundle adjustment needs cameras");
  if (!(problem.tukey_c > 0.0)) throw DomainError("Tukey scale must be positive");
  if (problem.pano_prior_enabled &&
      (!(problem.prior_sigma_t > 0.0) || !(problem.prior_sigma_r > 0.0))) {
    throw DomainError("prior sigmas must be positive");
  }
  for (const BaCamera& cam : problem.cameras) {
    if (cam.kind == BaVertexKind::Bounded &&
        (!(cam.t_bound > 0.0) || !(cam.r_bound > 0.0))) {
      throw DomainError("bounded cameras need positive bounds");
    }
  }
  bool any_pixel = false;
  for (const BaEdge& edge : problem.edges) {
    if (!edge.is_bearing) any_pixel = true;
  }
  validate_edges(problem.edges, problem.cameras.size(), problem.points.size(),
                 any_pixel ? &problem.intrinsics : nullptr);
  std::vector<int> edges_per_point(problem.points.size(), 0);
  for (const BaEdge& edge : problem.edges) {
    ++edges_per_point[static_cast<std::size_t>(edge.landmark)];
  }
  for (std::size_t j = 0; j < edges_per_point.size(); ++j) {
    if (edges_per_point[j] < 2) {
      throw DomainError("landmark " + std::to_string(j) + " has fewer than 2 edges");
    }
  }

  LmProblem internal;
  internal.cameras = &problem.cameras;
  internal.edges = &problem.edges;
  internal.point_free.assign(problem.points.size(), 1);
  internal.intrinsics = &problem.intrinsics;
  internal.tukey_c = problem.tukey_c;
  internal.use_robust = problem.use_robust;
  internal.prior_enabled = problem.pano_prior_enabled;
  internal.prior_sigma_t = problem.prior_sigma_t;
  internal.prior_sigma_r = problem.prior_sigma_r;
  internal.parallel = parallel;

  LmState state;
  state.cameras.reserve(problem.cameras.size());
  for (const BaCamera& cam : problem.cameras) state.cameras.push_back(cam.pose);
  state.points = problem.points;
  const LmReport report = lm_optimize(internal, state);

  BaResult result;
  result.problem = problem;
  for (std::size_t i = 0; i < problem.cameras.size(); ++i) {
    // Fixed vertices were never touched by the solver, so they copy through
    // bit-exactly.
    result.problem.cameras[i].pose = state.cameras[i];
  }
  result.problem.points = state.points;
  result.initial_cost = report.initial_cost;
  result.final_cost = report.final_cost;
  result.iterations = report.iterations;
  result.converged = report.converged;
  return result;
}

}  // namespace svloc
