#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "dexgrasp/camera.hpp"
#include "dexgrasp/cloud.hpp"

#include <nlohmann/json.hpp>

namespace dexgrasp {

struct PartRegion {
  int id;
  std::string name;
  Mask2D mask;
};

struct PartAnnotation {
  std::vector<PartRegion> regions;

  const PartRegion* find(int id) const {
    for (const auto& r : regions)
      if (r.id == id) return &r;
    return nullptr;
  }
};

struct ContactSet {
  std::vector<size_t> m_hand;   // 3D hand-contact region, indices into object cloud
  std::vector<size_t> m_func;   // 3D functional-finger region
  std::vector<size_t> p_thumb;  // point-level thumb contact
  std::vector<size_t> p_index;  // point-level index contact
  nlohmann::json provenance;    // selected region/point ids, 2D mask paths

  bool has_point_level() const { return !p_thumb.empty() && !p_index.empty(); }
};

struct ContactInferenceConfig {
  double depth_tolerance = 0.005;  // visibility: |projected - rendered| depth
  double near_radius = 0.02;      // unlabeled points this close to contact get propagated
  int kmeans_k = 8;
  int knn_k = 5;
  double sphere_radius = 0.015;   // point-contact expansion
  uint64_t seed = 0;
};

// ---------------------------------------------------------------------------

inline Mask2D merge_selected_parts(const PartAnnotation& annot, const std::vector<int>& ids) {
  if (ids.empty()) throw Error(ErrorCode::EmptyMask, "no region ids selected");
  Mask2D out;
  for (int id : ids) {
    const PartRegion* r = annot.find(id);
    if (!r) throw Error(ErrorCode::UnknownRegion, "region id " + std::to_string(id));
    if (out.width == 0) out = Mask2D(r->mask.width, r->mask.height);
    if (r->mask.width != out.width || r->mask.height != out.height)
      throw Error(ErrorCode::InputError, "annotation mask dimensions differ");
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] |= r->mask.data[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature-space K-Means + KNN label propagation.

namespace detail {

inline double feat_dist2(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double d = double(a[i]) - double(b[i]);
    s += d * d;
  }
  return s;
}

// Lloyd iterations with deterministic seeded init.
inline std::vector<int> kmeans(const std::vector<std::vector<float>>& feats, int k, uint64_t seed,
                               int iters = 30) {
  int n = int(feats.size());
  k = std::min(k, n);
  Rng rng(seed);
  // k-means++ style init
  std::vector<std::vector<float>> centers;
  centers.push_back(feats[rng.next_index(n)]);
  std::vector<double> d2(n);
  while (int(centers.size()) < k) {
    double total = 0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::max();
      for (const auto& c : centers) best = std::min(best, feat_dist2(feats[i], c));
      d2[i] = best;
      total += best;
    }
    if (total <= 0) break;  // all remaining points coincide with centers
    double r = rng.next_double() * total;
    int pick = 0;
    for (int i = 0; i < n; ++i) {
      r -= d2[i];
      if (r <= 0) {
        pick = i;
        break;
      }
      pick = i;
    }
    centers.push_back(feats[pick]);
  }
  k = int(centers.size());

  std::vector<int> assign(n, 0);
  for (int it = 0; it < iters; ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::max();
      for (int c = 0; c < k; ++c) {
        double d = feat_dist2(feats[i], centers[c]);
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    if (!changed && it > 0) break;
    std::vector<std::vector<double>> sums(k, std::vector<double>(feats[0].size(), 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      for (size_t f = 0; f < feats[i].size(); ++f) sums[assign[i]][f] += feats[i][f];
      counts[assign[i]]++;
    }
    for (int c = 0; c < k; ++c)
      if (counts[c])
        for (size_t f = 0; f < sums[c].size(); ++f)
          centers[c][f] = float(sums[c][f] / counts[c]);
  }
  return assign;
}

}  // namespace detail

inline std::vector<std::vector<float>> fallback_features(const OrientedPointCloud& object) {
  double diam = std::max(1e-9, object.diameter());
  std::vector<std::vector<float>> feats(object.size());
  for (size_t i = 0; i < object.size(); ++i) {
    const Vec3& p = object.points[i];
    const Vec3& n = object.normals[i];
    feats[i] = {float(p.x() / diam), float(p.y() / diam), float(p.z() / diam),
                float(n.x()),        float(n.y()),        float(n.z())};
  }
  return feats;
}

// Lifts a 2D contact mask onto the full object cloud. Visible points take
// their projected label directly; occluded points near the contact set are
// K-Means clustered in feature space and each cluster adopts the majority
// KNN label against the visible (labeled) points.
inline std::vector<size_t> lift_mask_to_3d(const Mask2D& mask, const DepthImage& depth,
                                           const PinholeCamera& cam,
                                           const OrientedPointCloud& object,
                                           const ContactInferenceConfig& cfg = {}) {
  if (object.empty()) throw Error(ErrorCode::EmptyCloud, "lift on empty cloud");
  std::vector<std::vector<float>> fallback;
  if (!object.has_features()) fallback = fallback_features(object);
  const auto& feats = object.has_features() ? object.features : fallback;

  enum Label : int8_t { kUnlabeled = -1, kExclusive = 0, kContact = 1 };
  std::vector<int8_t> label(object.size(), kUnlabeled);
  size_t n_contact = 0;
  for (size_t i = 0; i < object.size(); ++i) {
    Vec3 uvz = cam.project(object.points[i]);
    int u = int(std::floor(uvz.x())), v = int(std::floor(uvz.y()));
    if (uvz.z() <= 0 || !mask.in_bounds(u, v)) continue;
    float rendered = depth.at(u, v);
    if (rendered <= 0 || std::abs(double(rendered) - uvz.z()) > cfg.depth_tolerance)
      continue;  // occluded or off-surface
    label[i] = mask.at(u, v) ? kContact : kExclusive;
    if (label[i] == kContact) ++n_contact;
  }
  if (n_contact == 0) throw Error(ErrorCode::NoVisibleContact, "mask covers no visible points");

  // Unlabeled points near any contact point get propagated labels.
  std::vector<Vec3> contact_pts;
  for (size_t i = 0; i < object.size(); ++i)
    if (label[i] == kContact) contact_pts.push_back(object.points[i]);
  SpatialHash contact_hash(contact_pts);
  std::vector<size_t> pending;
  for (size_t i = 0; i < object.size(); ++i) {
    if (label[i] != kUnlabeled) continue;
    auto [idx, d] = contact_hash.nearest(object.points[i]);
    (void)idx;
    if (d <= cfg.near_radius) pending.push_back(i);
  }

  if (!pending.empty()) {
    std::vector<std::vector<float>> pend_feats;
    pend_feats.reserve(pending.size());
    for (size_t i : pending) pend_feats.push_back(feats[i]);
    auto assign = detail::kmeans(pend_feats, cfg.kmeans_k, cfg.seed);

    std::vector<size_t> labeled_idx;
    for (size_t i = 0; i < object.size(); ++i)
      if (label[i] != kUnlabeled) labeled_idx.push_back(i);

    int n_clusters = 1 + *std::max_element(assign.begin(), assign.end());
    std::vector<int> votes_contact(n_clusters, 0), votes_total(n_clusters, 0);
    int k = std::max(1, cfg.knn_k);
    for (size_t pi = 0; pi < pending.size(); ++pi) {
      // k nearest labeled points in feature space
      std::vector<std::pair<double, size_t>> dists;
      dists.reserve(labeled_idx.size());
      for (size_t li : labeled_idx)
        dists.emplace_back(detail::feat_dist2(feats[pending[pi]], feats[li]), li);
      size_t kk = std::min<size_t>(k, dists.size());
      std::partial_sort(dists.begin(), dists.begin() + kk, dists.end());
      int contact_votes = 0;
      for (size_t j = 0; j < kk; ++j)
        if (label[dists[j].second] == kContact) ++contact_votes;
      votes_total[assign[pi]] += int(kk);
      votes_contact[assign[pi]] += contact_votes;
    }
    for (size_t pi = 0; pi < pending.size(); ++pi) {
      int c = assign[pi];
      // majority vote; exact tie counts as contact
      label[pending[pi]] = 2 * votes_contact[c] >= votes_total[c] ? kContact : kExclusive;
    }
  }

  std::vector<size_t> out;
  for (size_t i = 0; i < object.size(); ++i)
    if (label[i] == kContact) out.push_back(i);
  return out;
}

// Object points within `radius` of the back-projected pixel. Radius zero
// degenerates to the single nearest point within a small match tolerance.
inline std::vector<size_t> expand_point_contact(const Eigen::Vector2i& pixel,
                                                const DepthImage& depth, const PinholeCamera& cam,
                                                const OrientedPointCloud& object, double radius,
                                                double match_tolerance = 2e-3) {
  if (!object.size()) throw Error(ErrorCode::EmptyCloud, "expand on empty cloud");
  if (pixel.x() < 0 || pixel.y() < 0 || pixel.x() >= depth.width || pixel.y() >= depth.height ||
      depth.at(pixel.x(), pixel.y()) <= 0)
    throw Error(ErrorCode::InvalidContactPixel, "selected pixel has no depth");
  Vec3 center =
      cam.back_project_pixel(pixel.x() + 0.5, pixel.y() + 0.5, depth.at(pixel.x(), pixel.y()));
  SpatialHash hash(object.points);
  auto out = hash.radius_query(center, radius);
  if (out.empty()) {
    auto [idx, d] = hash.nearest(center);
    if (d <= match_tolerance) out.push_back(idx);
  }
  return out;
}

// Point-level inference runs when the functional fingers landed on
// different parts, or when forced.
inline bool should_infer_points(const std::pair<int, std::string>& thumb_part,
                                const std::pair<int, std::string>& index_part, bool force_flag) {
  if (force_flag) return true;
  return !(thumb_part.first == index_part.first && thumb_part.second == index_part.second);
}

// ---------------------------------------------------------------------------
// Annotation directory: JSON index {regions: [{id, name, file}]} + PNG masks.

inline void save_annotation(const PartAnnotation& annot, const std::string& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json idx;
  idx["regions"] = nlohmann::json::array();
  for (const auto& r : annot.regions) {
    std::string file = "part_" + std::to_string(r.id) + ".png";
    save_mask_png(r.mask, dir + "/" + file);
    idx["regions"].push_back({{"id", r.id}, {"name", r.name}, {"file", file}});
  }
  std::ofstream f(dir + "/index.json");
  f << idx.dump(2) << "\n";
}

inline PartAnnotation load_annotation(const std::string& dir) {
  std::ifstream f(dir + "/index.json");
  if (!f) throw Error(ErrorCode::InputError, "cannot open " + dir + "/index.json");
  nlohmann::json idx = nlohmann::json::parse(f);
  PartAnnotation annot;
  for (const auto& e : idx.at("regions")) {
    PartRegion r;
    r.id = e.at("id").get<int>();
    r.name = e.at("name").get<std::string>();
    r.mask = load_mask_png(dir + "/" + e.at("file").get<std::string>());
    r.mask.region_id = r.id;
    annot.regions.push_back(r);
  }
  return annot;
}

}  // namespace dexgrasp
