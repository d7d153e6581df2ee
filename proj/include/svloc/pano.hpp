#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "svloc/geo.hpp"

namespace svloc {

/// Scalar "luminance" field over an equirectangular panorama, sampled in the
/// panorama's own grid frame: phi is azimuth relative to the panorama's
/// stored reference direction (the capture vehicle heading), theta is
/// absolute elevation. Implementations must be safe for concurrent sampling.
class EquirectField {
 public:
  virtual ~EquirectField() = default;
  virtual double sample(const SphericalAngle& a) const = 0;
  virtual int width() const = 0;
  virtual int height() const = 0;
};

/// Field defined by an arbitrary function of the angles.
class ProceduralField : public EquirectField {
 public:
  ProceduralField(std::function<double(const SphericalAngle&)> fn, int width, int height);
  double sample(const SphericalAngle& a) const override { return fn_(a); }
  int width() const override { return width_; }
  int height() const override { return height_; }

 private:
  std::function<double(const SphericalAngle&)> fn_;
  int width_;
  int height_;
};

/// Gridded field: row-major float32 samples, bilinear interpolation with
/// azimuth wrap-around and elevation clamping. Pixel (i, j) holds the sample
/// at phi = -pi + (j + 0.5) * 2pi / W, theta = pi/2 - (i + 0.5) * pi / H.
class GridField : public EquirectField {
 public:
  GridField(std::vector<float> data, int width, int height);
  double sample(const SphericalAngle& a) const override;
  int width() const override { return width_; }
  int height() const override { return height_; }
  const std::vector<float>& data() const { return data_; }

  /// Row-major float32 little-endian binary IO.
  static GridField load(const std::string& path, int width, int height);
  void save(const std::string& path) const;

 private:
  std::vector<float> data_;
  int width_;
  int height_;
};

/// Analytic field: a sum of isotropic angular Gaussian splats. Cheap to
/// store, exact to sample at any resolution. A coarse spatial hash over the
/// sphere keeps evaluation local to nearby splats.
class AngularSplatField : public EquirectField {
 public:
  struct Splat {
    double phi = 0.0;
    double theta = 0.0;
    double amplitude = 1.0;
  };

  AngularSplatField(std::vector<Splat> splats, double sigma_rad, int width, int height);
  double sample(const SphericalAngle& a) const override;
  int width() const override { return width_; }
  int height() const override { return height_; }
  const std::vector<Splat>& splats() const { return splats_; }
  double sigma() const { return sigma_; }

 private:
  std::size_t bin_of(double phi, double theta) const;

  std::vector<Splat> splats_;
  double sigma_;
  int width_;
  int height_;
  int bins_phi_;
  int bins_theta_;
  std::vector<std::vector<int>> bins_;
};

/// Geotagged panorama. `location`, `vehicle_heading` and `height` are the
/// *recorded* metadata the localizer is allowed to believe; `true_pose` is
/// simulator ground truth reserved for evaluation.
struct PanoramaRecord {
  std::string id;
  LatLon location;
  double vehicle_heading = 0.0;  // radians, clockwise from north, in [-pi, pi)
  double height = 2.5;           // camera height above ground, meters
  std::shared_ptr<const EquirectField> equirect;
  Pose true_pose;
};

/// Rectilinear view resampled from a panorama by a virtual pinhole camera.
struct VirtualView {
  std::string source_id;
  double heading = 0.0;
  double pitch = 0.0;
  CameraIntrinsics intrinsics;
  Pose pose;                 // world-from-camera, from the recorded metadata
  std::vector<float> field;  // row-major intrinsics.height_px x width_px

  /// Bilinear sample at a continuous pixel position (clamped to the grid).
  double value_at(const PixelCoord& p) const;
};

/// Immutable store of panoramas with a 2-D KD-tree over local east/north.
class PanoDatabase {
 public:
  PanoDatabase() : frame_(LatLon(0.0, 0.0)) {}
  PanoDatabase(std::vector<PanoramaRecord> records, const LocalFrame& frame);

  /// k nearest records by horizontal distance, ascending; ties broken by id.
  /// Throws DomainError for an empty database or k < 1.
  std::vector<std::pair<const PanoramaRecord*, double>> query_nearby(const LatLon& p,
                                                                     int k) const;

  /// Reference implementation of query_nearby (linear scan); used by tests.
  std::vector<std::pair<const PanoramaRecord*, double>> query_brute_force(const LatLon& p,
                                                                          int k) const;

  const std::vector<PanoramaRecord>& records() const { return records_; }
  const LocalFrame& frame() const { return frame_; }
  bool empty() const { return records_.empty(); }

 private:
  struct Node {
    int record = -1;
    int axis = 0;
    int left = -1;
    int right = -1;
  };

  int build(std::vector<int>& idx, int lo, int hi, int depth);
  void query_node(int node, const Vec2& q, int k,
                  std::vector<std::pair<double, int>>& best) const;

  std::vector<PanoramaRecord> records_;
  std::vector<Vec2> positions_;
  std::vector<Node> nodes_;
  int root_ = -1;
  LocalFrame frame_;
};

/// Build a database; duplicate ids or an empty record list are construction
/// errors.
PanoDatabase build_database(std::vector<PanoramaRecord> records, const LocalFrame& frame);

/// Resample a rectilinear virtual-camera view from a panorama. `heading` and
/// `pitch` give the absolute view direction; the view pose is the recorded
/// panorama pose rotated accordingly. The parallel and serial variants are
/// bit-identical.
VirtualView extract_view(const PanoramaRecord& record, const LocalFrame& frame, double heading,
                         double pitch, const CameraIntrinsics& intrinsics);
VirtualView extract_view_serial(const PanoramaRecord& record, const LocalFrame& frame,
                                double heading, double pitch,
                                const CameraIntrinsics& intrinsics);

/// Believed world-from-camera pose of a virtual view of `record`.
Pose virtual_view_pose(const PanoramaRecord& record, const LocalFrame& frame, double heading,
                       double pitch);

/// Pluggable record source so a network client could be added later; only
/// the file-based implementation ships.
class PanoFetcher {
 public:
  virtual ~PanoFetcher() = default;
  virtual bool fetch(const std::string& id, PanoramaRecord& out) const = 0;
};

class FilePanoFetcher : public PanoFetcher {
 public:
  explicit FilePanoFetcher(const std::string& fixture_dir);
  bool fetch(const std::string& id, PanoramaRecord& out) const override;

 private:
  std::vector<PanoramaRecord> records_;
};

/// Fixture layout: `<dir>/panos/index.json` plus optional `<id>.f32` grids.
void save_pano_fixtures(const std::string& dir, const PanoDatabase& db);
PanoDatabase load_pano_fixtures(const std::string& dir);

}  // namespace svloc
