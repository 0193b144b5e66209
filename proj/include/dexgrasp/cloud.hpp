#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include "dexgrasp/core.hpp"

#include <nlohmann/json.hpp>

namespace dexgrasp {

struct OrientedPointCloud {
  std::vector<Vec3> points;
  std::vector<Vec3> normals;                 // unit, same length as points
  std::vector<std::vector<float>> features;  // optional, fixed width
  std::vector<int> part_labels;              // optional, per point

  size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_features() const { return !features.empty(); }
  bool has_part_labels() const { return !part_labels.empty(); }

  Vec3 centroid() const {
    Vec3 c = Vec3::Zero();
    for (const auto& p : points) c += p;
    return points.empty() ? c : Vec3(c / double(points.size()));
  }

  double diameter() const {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
    Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
    for (const auto& p : points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    return points.empty() ? 0.0 : (hi - lo).norm();
  }
};

// Uniform spatial hash over a fixed cell size. Exact: the query expands
// rings of cells until the best distance is provably final, falling back
// to brute force for tiny clouds.
class SpatialHash {
 public:
  explicit SpatialHash(const std::vector<Vec3>& points, double cell = 0.0) : points_(points) {
    if (points_.empty()) return;
    lo_ = hi_ = points_[0];
    for (const auto& p : points_) {
      lo_ = lo_.cwiseMin(p);
      hi_ = hi_.cwiseMax(p);
    }
    if (cell <= 0) {
      double d = (hi_ - lo_).norm();
      cell = std::max(1e-6, d / std::max(1.0, std::cbrt(double(points_.size()))));
    }
    cell_ = cell;
    for (size_t i = 0; i < points_.size(); ++i) cells_[key(points_[i])].push_back(i);
  }

  // Returns (index, distance); ties broken by lowest index.
  std::pair<size_t, double> nearest(const Vec3& q) const {
    if (points_.empty()) throw Error(ErrorCode::EmptyCloud, "nearest on empty cloud");
    if (points_.size() <= 32) return brute(q);
    // A query far outside the cloud would walk many empty rings; scanning
    // the points directly is cheaper there.
    Vec3 clamped = q.cwiseMax(lo_).cwiseMin(hi_);
    if ((q - clamped).norm() > 4 * cell_) return brute(q);
    long qx = long(std::floor(q.x() / cell_));
    long qy = long(std::floor(q.y() / cell_));
    long qz = long(std::floor(q.z() / cell_));
    size_t best = points_.size();
    double best_d2 = std::numeric_limits<double>::max();
    for (long r = 0;; ++r) {
      for (long dx = -r; dx <= r; ++dx)
        for (long dy = -r; dy <= r; ++dy)
          for (long dz = -r; dz <= r; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != r) continue;
            auto it = cells_.find(pack(qx + dx, qy + dy, qz + dz));
            if (it == cells_.end()) continue;
            for (size_t i : it->second) {
              double d2 = (points_[i] - q).squaredNorm();
              if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
                best_d2 = d2;
                best = i;
              }
            }
          }
      // A hit is final once the best distance fits inside the scanned rings.
      if (best < points_.size() && std::sqrt(best_d2) <= double(r) * cell_) break;
      if (double(r) * cell_ > 1e9) return brute(q);  // degenerate spread
    }
    return {best, std::sqrt(best_d2)};
  }

  std::vector<size_t> radius_query(const Vec3& q, double radius) const {
    std::vector<size_t> out;
    if (points_.empty()) return out;
    long lo_x = long(std::floor((q.x() - radius) / cell_));
    long hi_x = long(std::floor((q.x() + radius) / cell_));
    long lo_y = long(std::floor((q.y() - radius) / cell_));
    long hi_y = long(std::floor((q.y() + radius) / cell_));
    long lo_z = long(std::floor((q.z() - radius) / cell_));
    long hi_z = long(std::floor((q.z() + radius) / cell_));
    double r2 = radius * radius;
    for (long x = lo_x; x <= hi_x; ++x)
      for (long y = lo_y; y <= hi_y; ++y)
        for (long z = lo_z; z <= hi_z; ++z) {
          auto it = cells_.find(pack(x, y, z));
          if (it == cells_.end()) continue;
          for (size_t i : it->second)
            if ((points_[i] - q).squaredNorm() <= r2) out.push_back(i);
        }
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::pair<size_t, double> brute(const Vec3& q) const {
    size_t best = 0;
    double best_d2 = std::numeric_limits<double>::max();
    for (size_t i = 0; i < points_.size(); ++i) {
      double d2 = (points_[i] - q).squaredNorm();
      if (d2 < best_d2) {
        best_d2 = d2;
        best = i;
      }
    }
    return {best, std::sqrt(best_d2)};
  }

  static uint64_t pack(long x, long y, long z) {
    auto u = [](long v) { return uint64_t(uint32_t(int32_t(v))); };
    return (u(x) * 73856093ULL) ^ (u(y) * 19349663ULL) ^ (u(z) * 83492791ULL);
  }
  uint64_t key(const Vec3& p) const {
    return pack(long(std::floor(p.x() / cell_)), long(std::floor(p.y() / cell_)),
                long(std::floor(p.z() / cell_)));
  }

  std::vector<Vec3> points_;
  Vec3 lo_ = Vec3::Zero(), hi_ = Vec3::Zero();
  double cell_ = 1.0;
  std::unordered_map<uint64_t, std::vector<size_t>> cells_;
};

inline std::pair<size_t, double> nearest_point(const OrientedPointCloud& cloud, const Vec3& q) {
  if (cloud.empty()) throw Error(ErrorCode::EmptyCloud, "nearest_point on empty cloud");
  size_t best = 0;
  double best_d2 = std::numeric_limits<double>::max();
  for (size_t i = 0; i < cloud.points.size(); ++i) {
    double d2 = (cloud.points[i] - q).squaredNorm();
    if (d2 < best_d2) {
      best_d2 = d2;
      best = i;
    }
  }
  return {best, std::sqrt(best_d2)};
}

// Signed distance proxy: positive when q lies behind the nearest surface
// point's outward normal (inside the object).
inline double signed_penetration(const Vec3& q, const OrientedPointCloud& surface) {
  auto [idx, dist] = nearest_point(surface, q);
  (void)dist;
  return (surface.points[idx] - q).dot(surface.normals[idx]);
}

inline double signed_penetration(const Vec3& q, const OrientedPointCloud& surface,
                                 const SpatialHash& hash) {
  auto [idx, dist] = hash.nearest(q);
  (void)dist;
  return (surface.points[idx] - q).dot(surface.normals[idx]);
}

// ---------------------------------------------------------------------------
// Point cloud with features on disk: JSON header + row-major little-endian
// float32 blob. Header: {"point_count": N, "feature_width": W,
// "part_label_map": {"0": "handle", ...}}. Blob rows: xyz, nxyz, features.

inline void save_cloud(const OrientedPointCloud& cloud, const std::string& header_path,
                       const std::string& blob_path,
                       const std::unordered_map<int, std::string>& label_names = {}) {
  nlohmann::json h;
  h["point_count"] = cloud.size();
  h["feature_width"] = cloud.has_features() ? cloud.features[0].size() : 0;
  h["has_part_labels"] = cloud.has_part_labels();
  nlohmann::json lm = nlohmann::json::object();
  for (const auto& [id, name] : label_names) lm[std::to_string(id)] = name;
  h["part_label_map"] = lm;
  std::ofstream hf(header_path);
  hf << h.dump(2) << "\n";

  std::ofstream bf(blob_path, std::ios::binary);
  size_t fw = cloud.has_features() ? cloud.features[0].size() : 0;
  for (size_t i = 0; i < cloud.size(); ++i) {
    float row[6] = {float(cloud.points[i].x()), float(cloud.points[i].y()),
                    float(cloud.points[i].z()), float(cloud.normals[i].x()),
                    float(cloud.normals[i].y()), float(cloud.normals[i].z())};
    bf.write(reinterpret_cast<const char*>(row), sizeof(row));
    if (fw) bf.write(reinterpret_cast<const char*>(cloud.features[i].data()), fw * sizeof(float));
    if (cloud.has_part_labels()) {
      float lbl = float(cloud.part_labels[i]);
      bf.write(reinterpret_cast<const char*>(&lbl), sizeof(float));
    }
  }
}

inline OrientedPointCloud load_cloud(const std::string& header_path, const std::string& blob_path) {
  std::ifstream hf(header_path);
  if (!hf) throw Error(ErrorCode::InputError, "cannot open " + header_path);
  nlohmann::json h = nlohmann::json::parse(hf);
  size_t n = h.at("point_count").get<size_t>();
  size_t fw = h.at("feature_width").get<size_t>();
  bool labels = h.value("has_part_labels", false);

  std::ifstream bf(blob_path, std::ios::binary);
  if (!bf) throw Error(ErrorCode::InputError, "cannot open " + blob_path);
  OrientedPointCloud cloud;
  cloud.points.reserve(n);
  cloud.normals.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    float row[6];
    bf.read(reinterpret_cast<char*>(row), sizeof(row));
    if (!bf) throw Error(ErrorCode::InputError, "truncated cloud blob " + blob_path);
    cloud.points.emplace_back(row[0], row[1], row[2]);
    cloud.normals.emplace_back(row[3], row[4], row[5]);
    if (fw) {
      std::vector<float> feat(fw);
      bf.read(reinterpret_cast<char*>(feat.data()), fw * sizeof(float));
      cloud.features.push_back(std::move(feat));
    }
    if (labels) {
      float lbl;
      bf.read(reinterpret_cast<char*>(&lbl), sizeof(float));
      cloud.part_labels.push_back(int(lbl));
    }
  }
  return cloud;
}

}  // namespace dexgrasp
