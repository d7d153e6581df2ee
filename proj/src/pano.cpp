#include "svloc/pano.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <utility>

#include <json.hpp>

#include "svloc/error.hpp"

namespace svloc {

namespace {

void require_dims(int width, int height) {
  if (width <= 0 || height <= 0) throw DomainError("field dimensions must be positive");
}

}  // namespace

ProceduralField::ProceduralField(std::function<double(const SphericalAngle&)> fn, int width,
                                 int height)
    : fn_(std::move(fn)), width_(width), height_(height) {
  require_dims(width, height);
  if (!fn_) throw DomainError("ProceduralField requires a callable");
}

GridField::GridField(std::vector<float> data, int width, int height)
    : data_(std::move(data)), width_(width), height_(height) {
  require_dims(width, height);
  if (data_.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
    throw DomainError("GridField data size does not match width * height");
  }
}

double GridField::sample(const SphericalAngle& a) const {
  // Continuous pixel coordinates with samples at pixel centers.
  const double x = (a.phi + kPi) / (2.0 * kPi) * width_ - 0.5;
  const double y = (kPi / 2.0 - a.theta) / kPi * height_ - 0.5;
  const int j0 = static_cast<int>(std::floor(x));
  const int i0 = static_cast<int>(std::floor(y));
  const double fx = x - j0;
  const double fy = y - i0;
  const auto col = [this](int j) {
    int m = j % width_;
    return m < 0 ? m + width_ : m;  // azimuth wraps
  };
  const auto row = [this](int i) { return std::clamp(i, 0, height_ - 1); };  // elevation clamps
  const double v00 = data_[static_cast<std::size_t>(row(i0)) * width_ + col(j0)];
  const double v01 = data_[static_cast<std::size_t>(row(i0)) * width_ + col(j0 + 1)];
  const double v10 = data_[static_cast<std::size_t>(row(i0 + 1)) * width_ + col(j0)];
  const double v11 = data_[static_cast<std::size_t>(row(i0 + 1)) * width_ + col(j0 + 1)];
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
}

GridField GridField::load(const std::string& path, int width, int height) {
  require_dims(width, height);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open grid file: " + path);
  std::vector<float> data(static_cast<std::size_t>(width) * height);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(data.size() * sizeof(float))) {
    throw IoError("grid file truncated: " + path);
  }
  return GridField(std::move(data), width, height);
}

void GridField::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write grid file: " + path);
  out.write(reinterpret_cast<const char*>(data_.data()),
            static_cast<std::streamsize>(data_.size() * sizeof(float)));
  if (!out) throw IoError("short write to grid file: " + path);
}

AngularSplatField::AngularSplatField(std::vector<Splat> splats, double sigma_rad, int width,
                                     int height)
    : splats_(std::move(splats)), sigma_(sigma_rad), width_(width), height_(height) {
  require_dims(width, height);
  if (!(sigma_ > 0.0)) throw DomainError("splat sigma must be positive");
  bins_phi_ = 128;
  bins_theta_ = 64;
  bins_.assign(static_cast<std::size_t>(bins_phi_) * bins_theta_, {});
  const double reach = 4.0 * sigma_;
  for (int s = 0; s < static_cast<int>(splats_.size()); ++s) {
    const Splat& sp = splats_[s];
    // Conservative phi half-width: scale by the smallest cosine in the
    // splat's theta band so the support box covers the angular-metric ball.
    const double band = std::min(kPi / 2.0, std::abs(sp.theta) + reach);
    const double cmin = std::max(std::cos(band), 0.05);
    const double dphi = reach / cmin;
    const double t_lo = sp.theta - reach;
    const double t_hi = sp.theta + reach;
    int bt_lo = static_cast<int>(std::floor((kPi / 2.0 - t_hi) / kPi * bins_theta_));
    int bt_hi = static_cast<int>(std::floor((kPi / 2.0 - t_lo) / kPi * bins_theta_));
    bt_lo = std::clamp(bt_lo, 0, bins_theta_ - 1);
    bt_hi = std::clamp(bt_hi, 0, bins_theta_ - 1);
    if (dphi >= kPi) {
      for (int bt = bt_lo; bt <= bt_hi; ++bt) {
        for (int bp = 0; bp < bins_phi_; ++bp) {
          bins_[static_cast<std::size_t>(bt) * bins_phi_ + bp].push_back(s);
        }
      }
      continue;
    }
    const int bp_lo = static_cast<int>(std::floor((sp.phi - dphi + kPi) / (2.0 * kPi) * bins_phi_));
    const int bp_hi = static_cast<int>(std::floor((sp.phi + dphi + kPi) / (2.0 * kPi) * bins_phi_));
    for (int bt = bt_lo; bt <= bt_hi; ++bt) {
      for (int bp = bp_lo; bp <= bp_hi; ++bp) {
        int m = bp % bins_phi_;
        if (m < 0) m += bins_phi_;
        bins_[static_cast<std::size_t>(bt) * bins_phi_ + m].push_back(s);
      }
    }
  }
}

std::size_t AngularSplatField::bin_of(double phi, double theta) const {
  int bp = static_cast<int>(std::floor((phi + kPi) / (2.0 * kPi) * bins_phi_));
  int bt = static_cast<int>(std::floor((kPi / 2.0 - theta) / kPi * bins_theta_));
  bp = std::clamp(bp, 0, bins_phi_ - 1);
  bt = std::clamp(bt, 0, bins_theta_ - 1);
  return static_cast<std::size_t>(bt) * bins_phi_ + bp;
}

double AngularSplatField::sample(const SphericalAngle& a) const {
  const double cutoff_sq = 16.0 * sigma_ * sigma_;
  const double inv_two_sigma_sq = 0.5 / (sigma_ * sigma_);
  double total = 0.0;
  for (int s : bins_[bin_of(a.phi, a.theta)]) {
    const Splat& sp = splats_[s];
    const double dtheta = a.theta - sp.theta;
    const double dphi = wrap_pi(a.phi - sp.phi);
    const double c = std::cos(0.5 * (a.theta + sp.theta));
    const double d_sq = dtheta * dtheta + c * c * dphi * dphi;
    if (d_sq > cutoff_sq) continue;
    total += sp.amplitude * std::exp(-d_sq * inv_two_sigma_sq);
  }
  return total;
}

double VirtualView::value_at(const PixelCoord& p) const {
  const int w = intrinsics.width_px;
  const int h = intrinsics.height_px;
  const double x = std::clamp(p.x, 0.0, static_cast<double>(w - 1));
  const double y = std::clamp(p.y, 0.0, static_cast<double>(h - 1));
  const int j0 = std::min(static_cast<int>(std::floor(x)), w - 2 >= 0 ? w - 2 : 0);
  const int i0 = std::min(static_cast<int>(std::floor(y)), h - 2 >= 0 ? h - 2 : 0);
  const double fx = x - j0;
  const double fy = y - i0;
  const int j1 = std::min(j0 + 1, w - 1);
  const int i1 = std::min(i0 + 1, h - 1);
  const double v00 = field[static_cast<std::size_t>(i0) * w + j0];
  const double v01 = field[static_cast<std::size_t>(i0) * w + j1];
  const double v10 = field[static_cast<std::size_t>(i1) * w + j0];
  const double v11 = field[static_cast<std::size_t>(i1) * w + j1];
  return (1.0 - fy) * ((1.0 - fx) * v00 + fx * v01) + fy * ((1.0 - fx) * v10 + fx * v11);
}

PanoDatabase::PanoDatabase(std::vector<PanoramaRecord> records, const LocalFrame& frame)
    : records_(std::move(records)), frame_(frame) {
  if (records_.empty()) throw DomainError("panorama database requires at least one record");
  std::set<std::string> ids;
  positions_.reserve(records_.size());
  for (const auto& r : records_) {
    if (!ids.insert(r.id).second) throw DomainError("duplicate panorama id: " + r.id);
    positions_.push_back(frame_.to_local(r.location));
  }
  std::vector<int> idx(records_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  nodes_.reserve(records_.size());
  root_ = build(idx, 0, static_cast<int>(idx.size()), 0);
}

int PanoDatabase::build(std::vector<int>& idx, int lo, int hi, int depth) {
  if (lo >= hi) return -1;
  const int axis = depth % 2;
  const int mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi, [&](int a, int b) {
    if (positions_[a][axis] != positions_[b][axis]) {
      return positions_[a][axis] < positions_[b][axis];
    }
    return records_[a].id < records_[b].id;  // deterministic split for ties
  });
  Node node;
  node.record = idx[mid];
  node.axis = axis;
  const int self = static_cast<int>(nodes_.size());
  nodes_.push_back(node);
  const int left = build(idx, lo, mid, depth + 1);
  const int right = build(idx, mid + 1, hi, depth + 1);
  nodes_[self].left = left;
  nodes_[self].right = right;
  return self;
}

namespace {

// Ascending (distance, id): the ordering used both for results and for
// deciding which candidate a full k-best list evicts.
bool better_candidate(const std::pair<double, int>& a, const std::pair<double, int>& b,
                      const std::vector<PanoramaRecord>& records) {
  if (a.first != b.first) return a.first < b.first;
  return records[a.second].id < records[b.second].id;
}

}  // namespace

void PanoDatabase::query_node(int node_id, const Vec2& q, int k,
                              std::vector<std::pair<double, int>>& best) const {
  if (node_id < 0) return;
  const Node& node = nodes_[node_id];
  const Vec2& p = positions_[node.record];
  const double d_sq = (p - q).squaredNorm();
  const std::pair<double, int> cand{d_sq, node.record};
  if (static_cast<int>(best.size()) < k) {
    best.push_back(cand);
    std::push_heap(best.begin(), best.end(),
                   [&](const auto& a, const auto& b) { return better_candidate(a, b, records_); });
  } else if (better_candidate(cand, best.front(), records_)) {
    std::pop_heap(best.begin(), best.end(),
                  [&](const auto& a, const auto& b) { return better_candidate(a, b, records_); });
    best.back() = cand;
    std::push_heap(best.begin(), best.end(),
                   [&](const auto& a, const auto& b) { return better_candidate(a, b, records_); });
  }
  const double delta = q[node.axis] - p[node.axis];
  const int near = delta < 0.0 ? node.left : node.right;
  const int far = delta < 0.0 ? node.right : node.left;
  query_node(near, q, k, best);
  // The far side can still hold a winner when the slab distance does not
  // exceed the current worst (equality matters: ties are broken by id).
  if (static_cast<int>(best.size()) < k || delta * delta <= best.front().first) {
    query_node(far, q, k, best);
  }
}

std::vector<std::pair<const PanoramaRecord*, double>> PanoDatabase::query_nearby(const LatLon& p,
                                                                                 int k) const {
  if (records_.empty()) throw DomainError("query on empty panorama database");
  if (k < 1) throw DomainError("query_nearby requires k >= 1");
  const Vec2 q = frame_.to_local(p);
  std::vector<std::pair<double, int>> best;
  best.reserve(static_cast<std::size_t>(k) + 1);
  query_node(root_, q, k, best);
  std::sort(best.begin(), best.end(),
            [&](const auto& a, const auto& b) { return better_candidate(a, b, records_); });
  std::vector<std::pair<const PanoramaRecord*, double>> out;
  out.reserve(best.size());
  for (const auto& [d_sq, idx] : best) out.emplace_back(&records_[idx], std::sqrt(d_sq));
  return out;
}

std::vector<std::pair<const PanoramaRecord*, double>> PanoDatabase::query_brute_force(
    const LatLon& p, int k) const {
  if (records_.empty()) throw DomainError("query on empty panorama database");
  if (k < 1) throw DomainError("query_nearby requires k >= 1");
  const Vec2 q = frame_.to_local(p);
  std::vector<std::pair<double, int>> all;
  all.reserve(records_.size());
  for (std::size_t i = 0; i < records_.size(); ++i) {
    all.emplace_back((positions_[i] - q).squaredNorm(), static_cast<int>(i));
  }
  std::sort(all.begin(), all.end(),
            [&](const auto& a, const auto& b) { return better_candidate(a, b, records_); });
  if (static_cast<int>(all.size()) > k) all.resize(k);
  std::vector<std::pair<const PanoramaRecord*, double>> out;
  out.reserve(all.size());
  for (const auto& [d_sq, idx] : all) out.emplace_back(&records_[idx], std::sqrt(d_sq));
  return out;
}

PanoDatabase build_database(std::vector<PanoramaRecord> records, const LocalFrame& frame) {
  return PanoDatabase(std::move(records), frame);
}

Pose virtual_view_pose(const PanoramaRecord& record, const LocalFrame& frame, double heading,
                       double pitch) {
  const Vec2 en = frame.to_local(record.location);
  const Vec3 center(en.x(), en.y(), record.height);
  return Pose(camera_rotation_enu(heading, pitch), center);
}

namespace {

VirtualView extract_view_impl(const PanoramaRecord& record, const LocalFrame& frame,
                              double heading, double pitch, const CameraIntrinsics& intrinsics,
                              bool parallel) {
  if (!record.equirect) throw DomainError("panorama record has no field");
  VirtualView view;
  view.source_id = record.id;
  view.heading = heading;
  view.pitch = pitch;
  view.intrinsics = intrinsics;
  view.pose = virtual_view_pose(record, frame, heading, pitch);
  view.field.resize(static_cast<std::size_t>(intrinsics.width_px) * intrinsics.height_px);

  // Tangent point in the panorama's grid frame: the stored azimuth axis is
  // referenced to the capture vehicle heading.
  const SphericalAngle center =
      SphericalAngle::wrapped(pitch, wrap_pi(heading - record.vehicle_heading));
  const EquirectField& f = *record.equirect;
  const int w = intrinsics.width_px;
  const int h = intrinsics.height_px;
  const double cx = intrinsics.cx();
  const double cy = intrinsics.cy();
  const double inv_f = 1.0 / intrinsics.focal_px;

#pragma omp parallel for schedule(static) if (parallel)
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double xt = (j - cx) * inv_f;
      const double yt = (cy - i) * inv_f;
      const SphericalAngle a = gnomonic_inverse(xt, yt, center);
      view.field[static_cast<std::size_t>(i) * w + j] = static_cast<float>(f.sample(a));
    }
  }
  return view;
}

}  // namespace

VirtualView extract_view(const PanoramaRecord& record, const LocalFrame& frame, double heading,
                         double pitch, const CameraIntrinsics& intrinsics) {
  return extract_view_impl(record, frame, heading, pitch, intrinsics, true);
}

VirtualView extract_view_serial(const PanoramaRecord& record, const LocalFrame& frame,
                                double heading, double pitch,
                                const CameraIntrinsics& intrinsics) {
  return extract_view_impl(record, frame, heading, pitch, intrinsics, false);
}

namespace {

nlohmann::json field_to_json(const PanoramaRecord& record, const std::string& pano_dir) {
  nlohmann::json jf;
  if (const auto* splat = dynamic_cast<const AngularSplatField*>(record.equirect.get())) {
    jf["type"] = "splats";
    jf["sigma"] = splat->sigma();
    jf["width"] = splat->width();
    jf["height"] = splat->height();
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : splat->splats()) {
      arr.push_back({s.phi, s.theta, s.amplitude});
    }
    jf["splats"] = std::move(arr);
  } else if (const auto* grid = dynamic_cast<const GridField*>(record.equirect.get())) {
    jf["type"] = "grid";
    jf["width"] = grid->width();
    jf["height"] = grid->height();
    jf["file"] = record.id + ".f32";
    grid->save(pano_dir + "/" + record.id + ".f32");
  } else {
    throw DomainError("cannot serialize field type for panorama " + record.id);
  }
  return jf;
}

std::shared_ptr<const EquirectField> field_from_json(const nlohmann::json& jf,
                                                     const std::string& pano_dir) {
  const std::string type = jf.at("type").get<std::string>();
  const int w = jf.at("width").get<int>();
  const int h = jf.at("height").get<int>();
  if (type == "splats") {
    std::vector<AngularSplatField::Splat> splats;
    for (const auto& s : jf.at("splats")) {
      splats.push_back({s.at(0).get<double>(), s.at(1).get<double>(), s.at(2).get<double>()});
    }
    return std::make_shared<AngularSplatField>(std::move(splats), jf.at("sigma").get<double>(), w,
                                               h);
  }
  if (type == "grid") {
    const std::string file = pano_dir + "/" + jf.at("file").get<std::string>();
    return std::make_shared<GridField>(GridField::load(file, w, h));
  }
  throw IoError("unknown field type in panorama index: " + type);
}

std::vector<PanoramaRecord> load_records(const std::string& dir, LatLon* origin_out) {
  const std::string pano_dir = dir + "/panos";
  const std::string index_path = pano_dir + "/index.json";
  std::ifstream in(index_path);
  if (!in) throw IoError("cannot open panorama index: " + index_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed panorama index " + index_path + ": " + e.what());
  }
  try {
    const LatLon origin(j.at("origin").at("lat").get<double>(),
                        j.at("origin").at("lon").get<double>());
    if (origin_out) *origin_out = origin;
    const LocalFrame frame(origin);
    std::vector<PanoramaRecord> records;
    for (const auto& jp : j.at("panos")) {
      PanoramaRecord r;
      r.id = jp.at("id").get<std::string>();
      r.location = LatLon(jp.at("lat").get<double>(), jp.at("lon").get<double>());
      r.vehicle_heading = jp.at("heading").get<double>();
      r.height = jp.at("height").get<double>();
      r.equirect = field_from_json(jp.at("field"), pano_dir);
      const Vec3 true_center(jp.at("true_east").get<double>(), jp.at("true_north").get<double>(),
                             r.height);
      r.true_pose = Pose(camera_rotation_enu(jp.at("true_heading").get<double>(), 0.0),
                         true_center);
      records.push_back(std::move(r));
    }
    return records;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("panorama index " + index_path + " missing fields: " + e.what());
  }
}

}  // namespace

void save_pano_fixtures(const std::string& dir, const PanoDatabase& db) {
  const std::string pano_dir = dir + "/panos";
  std::error_code ec;
  std::filesystem::create_directories(pano_dir, ec);
  if (ec) throw IoError("cannot create directory " + pano_dir + ": " + ec.message());

  nlohmann::json j;
  j["origin"] = {{"lat", db.frame().origin().lat}, {"lon", db.frame().origin().lon}};
  nlohmann::json panos = nlohmann::json::array();
  for (const auto& r : db.records()) {
    nlohmann::json jp;
    jp["id"] = r.id;
    jp["lat"] = r.location.lat;
    jp["lon"] = r.location.lon;
    jp["heading"] = r.vehicle_heading;
    jp["height"] = r.height;
    jp["field"] = field_to_json(r, pano_dir);
    const Vec3& c = r.true_pose.translation();
    jp["true_east"] = c.x();
    jp["true_north"] = c.y();
    // Heading of the true pose's forward (z) axis, azimuth from north.
    const Vec3 fwd = r.true_pose.rotation_matrix().col(2);
    jp["true_heading"] = std::atan2(fwd.x(), fwd.y());
    panos.push_back(std::move(jp));
  }
  j["panos"] = std::move(panos);

  const std::string index_path = pano_dir + "/index.json";
  std::ofstream out(index_path, std::ios::trunc);
  if (!out) throw IoError("cannot write panorama index: " + index_path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("short write to panorama index: " + index_path);
}

PanoDatabase load_pano_fixtures(const std::string& dir) {
  LatLon origin;
  std::vector<PanoramaRecord> records = load_records(dir, &origin);
  return PanoDatabase(std::move(records), LocalFrame(origin));
}

FilePanoFetcher::FilePanoFetcher(const std::string& fixture_dir) {
  records_ = load_records(fixture_dir, nullptr);
}

bool FilePanoFetcher::fetch(const std::string& id, PanoramaRecord& out) const {
  for (const auto& r : records_) {
    if (r.id == id) {
      out = r;
      return true;
    }
  }
  return false;
}

}  // namespace svloc
