#pragma once

#include <functional>
#include <vector>

#include "svloc/geo.hpp"
#include "svloc/pano.hpp"

namespace svloc {

/// Detected image feature. Detection itself is out of scope; keypoints come
/// from the simulator or from resampled panorama views.
struct KeyPoint {
  PixelCoord position;
  double scale = 1.0;       // pixels
  double orientation = 0.0;  // radians

  KeyPoint() = default;
  KeyPoint(const PixelCoord& pos, double scale_px, double orientation_rad);
};

/// Appearance descriptor: non-negative entries, unit L2 norm (within 1e-6).
struct Descriptor {
  std::vector<double> values;

  Descriptor() = default;
  explicit Descriptor(std::vector<double> v);

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
};

double descriptor_distance(const Descriptor& a, const Descriptor& b);

struct MatchPair {
  int index_a = -1;
  int index_b = -1;
  double distance = 0.0;
};

/// Nearest-neighbor matching with Lowe's ratio test (strict nearest <
/// ratio * second-nearest) and mutual-best cross check. Ordered by index_a.
std::vector<MatchPair> nn_match(const std::vector<Descriptor>& desc_a,
                                const std::vector<Descriptor>& desc_b, double ratio);

/// Image gradient surface over pixel coordinates, the carrier for virtual
/// line descriptors. Implementations must return finite gradients inside
/// [0, width) x [0, height).
struct GradientField {
  std::function<Vec2(double x, double y)> gradient;
  int width = 0;
  int height = 0;
};

/// Finite-difference gradient field over a resampled virtual view.
GradientField make_grid_gradient_field(const VirtualView& view);

struct VldParams {
  int disks = 10;             // descriptors per virtual line
  int bins = 8;               // orientation histogram bins per disk
  double delta = 0.35;        // consistency distance threshold in (0, 1)
  int min_consistent = 3;     // K: consistent peers required to survive
  bool length_ratio_gate = true;  // reject pairs with dissimilar segment lengths
  double max_length_ratio = 2.0;
  double neighbor_radius = 0.0;  // >0: only matches within this pixel radius
                                 // (in image a) count as candidate peers
};

/// Second-order descriptor for the virtual line between two keypoints:
/// per-disk gradient-orientation histograms (relative to the segment
/// direction, magnitude-weighted, L1-normalized) plus a main orientation.
struct VldDescriptor {
  int disks = 0;
  int bins = 0;
  std::vector<double> histograms;    // disks x bins, row-major
  std::vector<double> orientations;  // segment-relative, radians
};

/// Throws DegenerateError when the segment is shorter than 2 px.
VldDescriptor compute_vld(const GradientField& field, const KeyPoint& p1, const KeyPoint& p2,
                          const VldParams& params);

/// Dissimilarity in [0, 1]: mean over disks of equally weighted histogram
/// and orientation terms. Symmetric; zero iff the descriptors are equal.
double vld_distance(const VldDescriptor& v1, const VldDescriptor& v2);

/// K-VLD filter: keep matches supported by at least `min_consistent` other
/// surviving matches whose virtual lines look alike in both images.
/// Removal rounds repeat to a fixpoint; output preserves input order.
/// Fewer than two input matches cannot support each other: returns empty.
std::vector<MatchPair> kvld_filter(const std::vector<MatchPair>& matches,
                                   const GradientField& field_a, const GradientField& field_b,
                                   const std::vector<KeyPoint>& kps_a,
                                   const std::vector<KeyPoint>& kps_b, const VldParams& params);

}  // namespace svloc
