#include "svloc/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "svloc/error.hpp"

namespace svloc {

KeyPoint::KeyPoint(const PixelCoord& pos, double scale_px, double orientation_rad)
    : position(pos), scale(scale_px), orientation(orientation_rad) {
  if (!(scale > 0.0)) throw DomainError("keypoint scale must be positive");
}

Descriptor::Descriptor(std::vector<double> v) : values(std::move(v)) {
  if (values.empty()) throw DomainError("descriptor must be non-empty");
  double norm_sq = 0.0;
  for (double x : values) {
    if (!std::isfinite(x) || x < 0.0) throw DomainError("descriptor entries must be finite and non-negative");
    norm_sq += x * x;
  }
  if (std::abs(std::sqrt(norm_sq) - 1.0) > 1e-6) throw DomainError("descriptor must have unit L2 norm");
}

double descriptor_distance(const Descriptor& a, const Descriptor& b) {
  if (a.size() != b.size()) throw DomainError("descriptor dimensions differ");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    sum += d * d;
  }
  return std::sqrt(sum);
}

std::vector<MatchPair> nn_match(const std::vector<Descriptor>& desc_a,
                                const std::vector<Descriptor>& desc_b, double ratio) {
  if (!(ratio > 0.0) || ratio > 1.0) throw DomainError("nn_match ratio must be in (0, 1]");
  if (desc_a.empty() || desc_b.empty()) return {};

  const double inf = std::numeric_limits<double>::infinity();

  // Best b for every a (strict < keeps the lowest index on ties), plus the
  // runner-up distance for the ratio test.
  std::vector<int> best_b(desc_a.size(), -1);
  std::vector<double> best_d(desc_a.size(), inf);
  std::vector<double> second_d(desc_a.size(), inf);
  for (std::size_t ia = 0; ia < desc_a.size(); ++ia) {
    for (std::size_t ib = 0; ib < desc_b.size(); ++ib) {
      const double d = descriptor_distance(desc_a[ia], desc_b[ib]);
      if (d < best_d[ia]) {
        second_d[ia] = best_d[ia];
        best_d[ia] = d;
        best_b[ia] = static_cast<int>(ib);
      } else if (d < second_d[ia]) {
        second_d[ia] = d;
      }
    }
  }

  // Best a for every b, for the mutual-best cross check.
  std::vector<int> best_a(desc_b.size(), -1);
  std::vector<double> best_a_d(desc_b.size(), inf);
  for (std::size_t ib = 0; ib < desc_b.size(); ++ib) {
    for (std::size_t ia = 0; ia < desc_a.size(); ++ia) {
      const double d = descriptor_distance(desc_a[ia], desc_b[ib]);
      if (d < best_a_d[ib]) {
        best_a_d[ib] = d;
        best_a[ib] = static_cast<int>(ia);
      }
    }
  }

  std::vector<MatchPair> out;
  for (std::size_t ia = 0; ia < desc_a.size(); ++ia) {
    const int ib = best_b[ia];
    if (ib < 0) continue;
    if (!(best_d[ia] < ratio * second_d[ia])) continue;
    if (best_a[ib] != static_cast<int>(ia)) continue;
    out.push_back({static_cast<int>(ia), ib, best_d[ia]});
  }
  return out;
}

GradientField make_grid_gradient_field(const VirtualView& view) {
  auto owned = std::make_shared<VirtualView>(view);
  GradientField f;
  f.width = view.intrinsics.width_px;
  f.height = view.intrinsics.height_px;
  f.gradient = [owned](double x, double y) {
    const double gx = (owned->value_at({x + 1.0, y}) - owned->value_at({x - 1.0, y})) / 2.0;
    const double gy = (owned->value_at({x, y + 1.0}) - owned->value_at({x, y - 1.0})) / 2.0;
    return Vec2(gx, gy);
  };
  return f;
}

namespace {

void validate_vld_params(const VldParams& p) {
  if (p.disks < 2) throw DomainError("VldParams: disks must be >= 2");
  if (p.bins < 4) throw DomainError("VldParams: bins must be >= 4");
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw DomainError("VldParams: delta must be in (0, 1)");
  if (p.min_consistent < 1) throw DomainError("VldParams: min_consistent must be >= 1");
}

}  // namespace

VldDescriptor compute_vld(const GradientField& field, const KeyPoint& p1, const KeyPoint& p2,
                          const VldParams& params) {
  validate_vld_params(params);
  if (!field.gradient) throw DomainError("gradient field has no callable");
  const double dx = p2.position.x - p1.position.x;
  const double dy = p2.position.y - p1.position.y;
  const double len = std::hypot(dx, dy);
  if (len < 2.0) throw DegenerateError("virtual line segment shorter than 2 px");

  const int D = params.disks;
  const int B = params.bins;
  const double beta = std::atan2(dy, dx);  // segment direction
  const Vec2 u(dx / len, dy / len);
  const Vec2 v(-u.y(), u.x());
  const double radius = len / (2.0 * D * 0.75);
  static constexpr double kOffsets[5] = {-1.0, -0.5, 0.0, 0.5, 1.0};

  VldDescriptor out;
  out.disks = D;
  out.bins = B;
  out.histograms.assign(static_cast<std::size_t>(D) * B, 0.0);
  out.orientations.assign(D, 0.0);

  for (int d = 0; d < D; ++d) {
    const double t = (d + 0.5) / D;
    const Vec2 center(p1.position.x + t * dx, p1.position.y + t * dy);
    double* hist = &out.histograms[static_cast<std::size_t>(d) * B];
    double sum_w = 0.0;
    double sum_sin = 0.0;
    double sum_cos = 0.0;
    for (double ou : kOffsets) {
      for (double ov : kOffsets) {
        const Vec2 s = center + radius * (ou * u + ov * v);
        const Vec2 g = field.gradient(s.x(), s.y());
        const double mag = g.norm();
        if (mag < 1e-300) continue;
        const double rel = wrap_pi(std::atan2(g.y(), g.x()) - beta);
        int bin = static_cast<int>(std::floor((rel + kPi) / (2.0 * kPi) * B));
        bin = std::clamp(bin, 0, B - 1);
        hist[bin] += mag;
        sum_w += mag;
        sum_sin += mag * std::sin(rel);
        sum_cos += mag * std::cos(rel);
      }
    }
    if (sum_w > 1e-12) {
      for (int b = 0; b < B; ++b) hist[b] /= sum_w;
      if (std::hypot(sum_sin, sum_cos) > 1e-12) {
        out.orientations[d] = std::atan2(sum_sin, sum_cos);
      }
    } else {
      for (int b = 0; b < B; ++b) hist[b] = 0.0;  // all-zero disk
    }
  }
  return out;
}

double vld_distance(const VldDescriptor& v1, const VldDescriptor& v2) {
  if (v1.disks != v2.disks || v1.bins != v2.bins) {
    throw DomainError("vld_distance: descriptor shapes differ");
  }
  if (v1.disks <= 0) throw DomainError("vld_distance: empty descriptor");
  double total = 0.0;
  for (int d = 0; d < v1.disks; ++d) {
    double l1 = 0.0;
    for (int b = 0; b < v1.bins; ++b) {
      const std::size_t i = static_cast<std::size_t>(d) * v1.bins + b;
      l1 += std::abs(v1.histograms[i] - v2.histograms[i]);
    }
    const double orient = std::abs(wrap_pi(v1.orientations[d] - v2.orientations[d])) / kPi;
    total += 0.5 * (0.5 * l1) + 0.5 * orient;
  }
  return total / v1.disks;
}

std::vector<MatchPair> kvld_filter(const std::vector<MatchPair>& matches,
                                   const GradientField& field_a, const GradientField& field_b,
                                   const std::vector<KeyPoint>& kps_a,
                                   const std::vector<KeyPoint>& kps_b, const VldParams& params) {
  validate_vld_params(params);
  const int n = static_cast<int>(matches.size());
  if (n < 2) return {};  // consistency needs at least one peer
  for (const auto& m : matches) {
    if (m.index_a < 0 || m.index_a >= static_cast<int>(kps_a.size()) || m.index_b < 0 ||
        m.index_b >= static_cast<int>(kps_b.size())) {
      throw DomainError("kvld_filter: match indices out of range");
    }
  }

  // Pairwise consistency, computed once. A pair is consistent when the
  // virtual lines it induces look alike in both images. The segment is drawn
  // in a canonical direction fixed by the match identities (not the list
  // positions), so the result cannot depend on input order.
  const auto match_before = [](const MatchPair& x, const MatchPair& y) {
    if (x.index_a != y.index_a) return x.index_a < y.index_a;
    return x.index_b < y.index_b;
  };
  std::vector<char> consistent(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const bool forward = match_before(matches[i], matches[j]);
      const MatchPair& first = forward ? matches[i] : matches[j];
      const MatchPair& second = forward ? matches[j] : matches[i];
      const KeyPoint& ai = kps_a[first.index_a];
      const KeyPoint& bi = kps_b[first.index_b];
      const KeyPoint& aj = kps_a[second.index_a];
      const KeyPoint& bj = kps_b[second.index_b];
      const double la = std::hypot(aj.position.x - ai.position.x, aj.position.y - ai.position.y);
      const double lb = std::hypot(bj.position.x - bi.position.x, bj.position.y - bi.position.y);
      if (la < 2.0 || lb < 2.0) continue;
      if (params.neighbor_radius > 0.0 && la > params.neighbor_radius) continue;
      if (params.length_ratio_gate &&
          std::max(la, lb) > params.max_length_ratio * std::min(la, lb)) {
        continue;
      }
      const VldDescriptor va = compute_vld(field_a, ai, aj, params);
      const VldDescriptor vb = compute_vld(field_b, bi, bj, params);
      if (vld_distance(va, vb) <= params.delta) {
        consistent[static_cast<std::size_t>(i) * n + j] = 1;
        consistent[static_cast<std::size_t>(j) * n + i] = 1;
      }
    }
  }

  // Synchronous removal rounds: every match short of support goes at once,
  // so the fixpoint does not depend on the input order.
  std::vector<char> alive(n, 1);
  for (;;) {
    std::vector<int> doomed;
    for (int i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      int count = 0;
      for (int j = 0; j < n; ++j) {
        if (j != i && alive[j] && consistent[static_cast<std::size_t>(i) * n + j]) ++count;
      }
      if (count < params.min_consistent) doomed.push_back(i);
    }
    if (doomed.empty()) break;
    for (int i : doomed) alive[i] = 0;
  }

  std::vector<MatchPair> out;
  for (int i = 0; i < n; ++i) {
    if (alive[i]) out.push_back(matches[i]);
  }
  return out;
}

}  // namespace svloc
