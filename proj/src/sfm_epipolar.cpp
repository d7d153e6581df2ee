#include "svloc/sfm.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "svloc/error.hpp"

namespace svloc {
namespace {

/// Similarity transform mapping a point set to centroid zero and mean
/// distance sqrt(2) (applied to homogeneous (x, y, 1) rays).
Mat3 hartley_normalization(const std::vector<NormalizedCorrespondence>& corrs,
                           bool first) {
  Vec2 centroid = Vec2::Zero();
  for (const auto& c : corrs) centroid += first ? c.y1 : c.y2;
  centroid /= static_cast<double>(corrs.size());
  double mean_dist = 0.0;
  for (const auto& c : corrs) mean_dist += ((first ? c.y1 : c.y2) - centroid).norm();
  mean_dist /= static_cast<double>(corrs.size());
  const double scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  Mat3 T = Mat3::Identity();
  T(0, 0) = scale;
  T(1, 1) = scale;
  T(0, 2) = -scale * centroid.x();
  T(1, 2) = -scale * centroid.y();
  return T;
}

/// Fix the free sign of E so the first entry above 1e-12 in row-major order
/// is positive.
void fix_essential_sign(Mat3& E) {
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      const double v = E(r, c);
      if (std::abs(v) > 1e-12) {
        if (v < 0.0) E = -E;
        return;
      }
    }
  }
}

/// Project onto the essential manifold (two equal leading singular values,
/// rank 2) and normalize to unit Frobenius norm.
Mat3 project_to_essential(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  // diag(1/sqrt(2), 1/sqrt(2), 0) has Frobenius norm exactly 1.
  const double s = 1.0 / std::sqrt(2.0);
  Mat3 E = svd.matrixU() * Eigen::DiagonalMatrix<double, 3>(s, s, 0.0) *
           svd.matrixV().transpose();
  fix_essential_sign(E);
  return E;
}

Vec3 homogeneous(const Vec2& y) { return Vec3(y.x(), y.y(), 1.0); }

}  // namespace

Mat3 estimate_essential_8pt(const std::vector<NormalizedCorrespondence>& corrs) {
  if (corrs.size() < 8) {
    throw ArityError("essential-matrix estimation needs at least 8 correspondences, got " +
                     std::to_string(corrs.size()));
  }
  const Mat3 T1 = hartley_normalization(corrs, true);
  const Mat3 T2 = hartley_normalization(corrs, false);

  Eigen::MatrixXd A(static_cast<Eigen::Index>(corrs.size()), 9);
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    const Vec3 a = T1 * homogeneous(corrs[i].y1);
    const Vec3 b = T2 * homogeneous(corrs[i].y2);
    // Row-major coefficients of a^T E b = 0.
    A.row(static_cast<Eigen::Index>(i)) << a.x() * b.x(), a.x() * b.y(), a.x(),
        a.y() * b.x(), a.y() * b.y(), a.y(), b.x(), b.y(), 1.0;
  }

  // Full V: for the minimal 8x9 system the null-space direction is the ninth
  // column, which a thin decomposition would not produce.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(0) <= 0.0 || sv(7) / sv(0) < 1e-10) {
    throw DegenerateError("essential-matrix design matrix is rank deficient");
  }
  const Eigen::VectorXd e = svd.matrixV().col(8);
  Mat3 En;
  En << e(0), e(1), e(2), e(3), e(4), e(5), e(6), e(7), e(8);
  // a^T En b = y1^T (T1^T En T2) y2.
  const Mat3 E = T1.transpose() * En * T2;
  return project_to_essential(E);
}

double epipolar_residual(const Mat3& E, const NormalizedCorrespondence& c) {
  return std::abs(homogeneous(c.y1).dot(E * homogeneous(c.y2)));
}

RansacEssentialResult ransac_essential(const std::vector<NormalizedCorrespondence>& corrs,
                                       int iterations, double threshold, Rng& rng) {
  if (corrs.size() < 8) {
    throw ArityError("RANSAC essential estimation needs at least 8 correspondences, got " +
                     std::to_string(corrs.size()));
  }
  if (iterations <= 0 || threshold <= 0.0) {
    throw DomainError("RANSAC iterations and threshold must be positive");
  }

  const int n = static_cast<int>(corrs.size());
  std::vector<char> best_mask(corrs.size(), 0);
  int best_count = -1;

  std::vector<NormalizedCorrespondence> sample(8);
  for (int it = 0; it < iterations; ++it) {
    const std::vector<int> idx = rng.sample_distinct(n, 8);
    for (int j = 0; j < 8; ++j) sample[static_cast<std::size_t>(j)] = corrs[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])];
    Mat3 E;
    try {
      E = estimate_essential_8pt(sample);
    } catch (const DegenerateError&) {
      continue;  // unlucky minimal sample; the iteration still counts
    }
    std::vector<char> mask(corrs.size(), 0);
    int count = 0;
    for (std::size_t i = 0; i < corrs.size(); ++i) {
      if (epipolar_residual(E, corrs[i]) < threshold) {
        mask[i] = 1;
        ++count;
      }
    }
    if (count > best_count) {
      best_count = count;
      best_mask = mask;
    }
  }

  if (best_count < 8) {
    throw ConsensusError("RANSAC found only " + std::to_string(std::max(best_count, 0)) +
                         " epipolar inliers (need 8)");
  }

  // Refit on the best consensus set and recompute the mask.
  std::vector<NormalizedCorrespondence> inlier_set;
  inlier_set.reserve(static_cast<std::size_t>(best_count));
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (best_mask[i]) inlier_set.push_back(corrs[i]);
  }
  RansacEssentialResult result;
  result.E = estimate_essential_8pt(inlier_set);
  result.inliers.assign(corrs.size(), 0);
  int final_count = 0;
  for (std::size_t i = 0; i < corrs.size(); ++i) {
    if (epipolar_residual(result.E, corrs[i]) < threshold) {
      result.inliers[i] = 1;
      ++final_count;
    }
  }
  if (final_count < 8) {
    throw ConsensusError("refit essential matrix keeps only " +
                         std::to_string(final_count) + " inliers (need 8)");
  }
  return result;
}

Vec3 triangulate_normalized(const Pose& pose1, const Pose& pose2, const Vec2& y1,
                            const Vec2& y2) {
  const Vec3 c1 = pose1.translation();
  const Vec3 c2 = pose2.translation();
  if ((c1 - c2).norm() < 1e-12) {
    throw DegenerateError("triangulation requires distinct camera centers");
  }
  const Vec3 d1 = (pose1.rotation_matrix() * homogeneous(y1)).normalized();
  const Vec3 d2 = (pose2.rotation_matrix() * homogeneous(y2)).normalized();
  const double cross = d1.cross(d2).norm();
  if (cross < 1e-8) {
    throw DegenerateError("triangulation rays are parallel within 1e-8 rad");
  }

  // Linear DLT on the two projective camera matrices P = [R^T | -R^T C].
  Eigen::Matrix<double, 4, 4> A;
  const Pose poses[2] = {pose1, pose2};
  const Vec2 ys[2] = {y1, y2};
  for (int k = 0; k < 2; ++k) {
    const Mat3 Rcw = poses[k].rotation_matrix().transpose();
    const Vec3 tc = -Rcw * poses[k].translation();
    Eigen::Matrix<double, 3, 4> P;
    P.leftCols<3>() = Rcw;
    P.col(3) = tc;
    A.row(2 * k) = ys[k].x() * P.row(2) - P.row(0);
    A.row(2 * k + 1) = ys[k].y() * P.row(2) - P.row(1);
  }
  Eigen::JacobiSVD<Eigen::Matrix<double, 4, 4>> svd(A, Eigen::ComputeFullV);
  const Eigen::Vector4d X = svd.matrixV().col(3);
  if (std::abs(X(3)) < 1e-14) {
    throw DegenerateError("triangulated point is at infinity");
  }
  return X.head<3>() / X(3);
}

Vec3 triangulate(const Pose& pose1, const Pose& pose2, const PixelCoord& x1,
                 const PixelCoord& x2, const CameraIntrinsics& intrinsics) {
  const double f = intrinsics.focal_px;
  const Vec2 y1((x1.x - intrinsics.cx()) / f, (x1.y - intrinsics.cy()) / f);
  const Vec2 y2((x2.x - intrinsics.cx()) / f, (x2.y - intrinsics.cy()) / f);
  return triangulate_normalized(pose1, pose2, y1, y2);
}

RelativePose decompose_essential(const Mat3& E,
                                 const std::vector<NormalizedCorrespondence>& corrs) {
  if (corrs.empty()) {
    throw ArityError("essential decomposition needs at least one correspondence");
  }
  Eigen::JacobiSVD<Mat3> svd(E, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 U = svd.matrixU();
  Mat3 V = svd.matrixV();
  if (U.determinant() < 0.0) U = -U;
  if (V.determinant() < 0.0) V = -V;
  Mat3 W;
  W << 0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0;

  const Mat3 R_candidates[2] = {U * W * V.transpose(), U * W.transpose() * V.transpose()};
  const Vec3 t_candidates[2] = {U.col(2), -U.col(2)};

  int best_count = -1;
  RelativePose best;
  const Pose cam1 = Pose::identity();
  for (const Mat3& R : R_candidates) {
    for (const Vec3& t : t_candidates) {
      // X_1 = R X_2 + t, so world-from-camera-2 is (R, t) with camera 1 as
      // the world frame.
      const Pose cam2(R, t);
      int count = 0;
      for (const auto& c : corrs) {
        try {
          const Vec3 X = triangulate_normalized(cam1, cam2, c.y1, c.y2);
          const Vec3 X2 = cam2.inverse_transform(X);
          if (X.z() > 0.0 && X2.z() > 0.0) ++count;
        } catch (const DegenerateError&) {
          // Point unusable for the cheirality vote under this candidate.
        }
      }
      if (count > best_count) {
        best_count = count;
        best.R = R;
        best.t = t;
      }
    }
  }

  if (best_count * 4 < static_cast<int>(corrs.size()) * 3) {
    throw AmbiguousError("essential decomposition is ambiguous: best candidate explains " +
                         std::to_string(best_count) + " of " +
                         std::to_string(corrs.size()) + " correspondences");
  }
  best.t.normalize();
  return best;
}

Pose vo_accumulate(const Pose& state, const RelativePose& rel, double mu) {
  if (!(mu >= 0.0) || !std::isfinite(mu)) {
    throw DomainError("visual-odometry scale must be finite and non-negative");
  }
  const Mat3 R_pos = state.rotation_matrix();
  const Vec3 t_pos = state.translation() + mu * (R_pos * rel.t);
  return Pose(Mat3(R_pos * rel.R), t_pos);
}

double ar_scale(const Vec3& ar_t_prev, const Vec3& ar_t_curr) {
  return (ar_t_curr - ar_t_prev).norm();
}

double ar_scale(const ArPose& prev, const ArPose& curr) {
  if (!prev.tracked || !curr.tracked) {
    throw ScaleUnavailableError("AR tracking lost; step scale unavailable");
  }
  return ar_scale(prev.position, curr.position);
}

}  // namespace svloc
