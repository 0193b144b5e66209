#pragma once

#include <algorithm>

#include "dexgrasp/cloud.hpp"
#include "dexgrasp/core.hpp"

namespace dexgrasp {

struct VerificationConfig {
  double tau_n = 0.85;          // rotation-filter cosine threshold
  double tau_m = 0.7;           // force-normal consistency threshold
  double neighbor_radius = 0.015;
  size_t neighbor_cap = 64;
};

struct SurfaceProbe {
  Vec3 point;
  std::vector<Vec3> neighbor_normals;
};

// Approximate Intersect(ray(C, D*), O) against the sampled surface: the
// first cloud point along the ray within a hit tolerance, falling back to
// the point nearest the ray.
inline SurfaceProbe nearest_contact_surface_point(const Vec3& origin, const Direction3& dir,
                                                  const OrientedPointCloud& object,
                                                  const VerificationConfig& cfg = {},
                                                  double hit_tolerance = 5e-3) {
  if (object.empty()) throw Error(ErrorCode::EmptyCloud, "probe on empty cloud");
  const Vec3& d = dir.vec();
  size_t best_hit = object.size(), best_near = 0;
  double best_hit_t = std::numeric_limits<double>::max();
  double best_perp = std::numeric_limits<double>::max();
  for (size_t i = 0; i < object.size(); ++i) {
    Vec3 rel = object.points[i] - origin;
    double t = rel.dot(d);
    if (t <= 0) continue;
    double perp = (rel - t * d).norm();
    if (perp <= hit_tolerance && t < best_hit_t) {
      best_hit_t = t;
      best_hit = i;
    }
    if (perp < best_perp) {
      best_perp = perp;
      best_near = i;
    }
  }
  size_t idx = best_hit < object.size() ? best_hit : best_near;

  SurfaceProbe probe;
  probe.point = object.points[idx];
  SpatialHash hash(object.points);
  auto neighbors = hash.radius_query(probe.point, cfg.neighbor_radius);
  if (neighbors.empty()) neighbors.push_back(idx);
  if (neighbors.size() > cfg.neighbor_cap) neighbors.resize(cfg.neighbor_cap);
  for (size_t n : neighbors) probe.neighbor_normals.push_back(object.normals[n]);
  return probe;
}

// A candidate survives iff some local normal satisfies |cos(n, D_finger)|
// >= tau_n. Returns indices of survivors.
inline std::vector<size_t> filter_rotation_candidates(const std::vector<Vec3>& finger_directions,
                                                      const std::vector<Vec3>& normals,
                                                      double tau_n) {
  std::vector<size_t> survivors;
  for (size_t k = 0; k < finger_directions.size(); ++k) {
    Vec3 f = finger_directions[k].normalized();
    bool aligned = false;
    for (const auto& n : normals) {
      double nn = n.norm();
      if (nn < 1e-12) continue;
      if (std::abs(n.dot(f)) / nn >= tau_n) {
        aligned = true;
        break;
      }
    }
    if (aligned) survivors.push_back(k);
  }
  return survivors;
}

// Force-normal consistency: F_thumb = P_thumb - P_index, F_index = -F_thumb.
// Each finger needs a neighbor normal with signed cos(n, F) >= tau_m.
inline bool validate_point_contacts(const Vec3& p_thumb, const Vec3& p_index,
                                    const std::vector<Vec3>& thumb_neighbor_normals,
                                    const std::vector<Vec3>& index_neighbor_normals,
                                    double tau_m) {
  Vec3 f_thumb = p_thumb - p_index;
  double len = f_thumb.norm();
  if (len < 1e-6) return false;  // degenerate force axis
  f_thumb /= len;
  Vec3 f_index = -f_thumb;
  auto finger_ok = [&](const Vec3& f, const std::vector<Vec3>& normals) {
    for (const auto& n : normals) {
      double nn = n.norm();
      if (nn < 1e-12) continue;
      if (n.dot(f) / nn >= tau_m) return true;
    }
    return false;
  };
  return finger_ok(f_thumb, thumb_neighbor_normals) && finger_ok(f_index, index_neighbor_normals);
}

}  // namespace dexgrasp
