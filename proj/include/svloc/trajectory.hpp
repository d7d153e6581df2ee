#pragma once

#include <string>
#include <vector>

#include "svloc/geo.hpp"

namespace svloc {

/// One sample of a trajectory in the local metric frame.
struct TrajectoryPoint {
  double t = 0.0;  // seconds
  double east = 0.0;
  double north = 0.0;
};

/// Timestamped polyline in the local frame. Used both for estimates (>= 1
/// point) and ground-truth references (>= 2 points).
struct Trajectory {
  std::vector<TrajectoryPoint> points;

  bool empty() const { return points.empty(); }
  std::size_t size() const { return points.size(); }
};

/// Pose reported by a phone AR tracker: metrically scaled, slowly drifting.
struct ArPose {
  double t = 0.0;
  Vec3 position = Vec3::Zero();
  Quat rotation = Quat::Identity();
  bool tracked = true;
};

/// Write `t,east,north,lat,lon` with 4 decimals for meters and 6 for degrees.
void write_trajectory_csv(const std::string& path, const Trajectory& trajectory,
                          const LocalFrame& frame);

/// Read a trajectory CSV produced by write_trajectory_csv (uses the east and
/// north columns). Throws IoError with the offending line number on malformed
/// input.
Trajectory read_trajectory_csv(const std::string& path);

/// AR pose stream IO: `t,tx,ty,tz,qw,qx,qy,qz,tracked`.
void write_ar_csv(const std::string& path, const std::vector<ArPose>& poses);
std::vector<ArPose> read_ar_csv(const std::string& path);

}  // namespace svloc
