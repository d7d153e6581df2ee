#include "svloc/trajectory.hpp"

#include <cstdio>
#include <fstream>

#include "csv_internal.hpp"

namespace svloc {

using detail::parse_numeric_line;

void write_trajectory_csv(const std::string& path, const Trajectory& trajectory,
                          const LocalFrame& frame) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open for writing: " + path);
  std::fputs("t,east,north,lat,lon\n", f);
  for (const TrajectoryPoint& p : trajectory.points) {
    const LatLon ll = frame.to_latlon(p.east, p.north);
    std::fprintf(f, "%.3f,%.4f,%.4f,%.6f,%.6f\n", p.t, p.east, p.north, ll.lat, ll.lon);
  }
  std::fclose(f);
}

Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  Trajectory out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) {
      if (line.rfind("t,", 0) != 0)
        throw IoError(path + ":1: expected header starting with 't,'");
      continue;
    }
    const std::vector<double> v = parse_numeric_line(line, 3, path, line_no);
    out.points.push_back({v[0], v[1], v[2]});
  }
  return out;
}

void write_ar_csv(const std::string& path, const std::vector<ArPose>& poses) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("cannot open for writing: " + path);
  std::fputs("t,tx,ty,tz,qw,qx,qy,qz,tracked\n", f);
  for (const ArPose& p : poses) {
    std::fprintf(f, "%.3f,%.9g,%.9g,%.9g,%.12g,%.12g,%.12g,%.12g,%d\n", p.t, p.position.x(),
                 p.position.y(), p.position.z(), p.rotation.w(), p.rotation.x(), p.rotation.y(),
                 p.rotation.z(), p.tracked ? 1 : 0);
  }
  std::fclose(f);
}

std::vector<ArPose> read_ar_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<ArPose> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line_no == 1) continue;  // header
    const std::vector<double> v = parse_numeric_line(line, 9, path, line_no);
    ArPose p;
    p.t = v[0];
    p.position = Vec3(v[1], v[2], v[3]);
    p.rotation = Quat(v[4], v[5], v[6], v[7]).normalized();
    p.tracked = v[8] != 0.0;
    out.push_back(p);
  }
  return out;
}

}  // namespace svloc
