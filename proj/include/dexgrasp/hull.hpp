#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "dexgrasp/core.hpp"

namespace dexgrasp {

struct HalfSpace {
  Vec3 normal;    // unit, outward
  double offset;  // plane is { p : normal . p = offset }
};

struct ConvexHull {
  std::vector<HalfSpace> half_spaces;
  std::vector<Vec3> vertices;

  bool contains(const Vec3& p, double tol = 1e-7) const {
    for (const auto& h : half_spaces)
      if (h.normal.dot(p) > h.offset + tol) return false;
    return true;
  }
};

namespace detail {

struct HullFace {
  int a, b, c;
  Vec3 normal;
  double offset;
  std::vector<int> outside;
  bool alive = true;
};

inline HullFace make_face(const std::vector<Vec3>& pts, int a, int b, int c,
                          const Vec3& interior) {
  HullFace f;
  f.a = a;
  f.b = b;
  f.c = c;
  Vec3 n = (pts[b] - pts[a]).cross(pts[c] - pts[a]);
  double len = n.norm();
  if (len < 1e-15) {
    f.normal = Vec3(0, 0, 1);
    f.offset = f.normal.dot(pts[a]);
    return f;
  }
  n /= len;
  if (n.dot(pts[a] - interior) < 0) {  // orient outward
    std::swap(f.b, f.c);
    n = -n;
  }
  f.normal = n;
  f.offset = n.dot(pts[a]);
  return f;
}

}  // namespace detail

// Incremental quickhull. Coplanar output faces are merged into single
// half-spaces (a cube yields exactly six).
inline ConvexHull convex_hull(const std::vector<Vec3>& points) {
  using detail::HullFace;
  using detail::make_face;
  if (points.size() < 4) throw Error(ErrorCode::DegenerateHull, "need at least 4 points");

  double scale = 0;
  for (const auto& p : points) scale = std::max(scale, p.cwiseAbs().maxCoeff());
  const double eps = std::max(1e-12, scale * 1e-10);

  // Initial simplex from extreme points.
  int i0 = 0, i1 = 0;
  for (size_t i = 1; i < points.size(); ++i) {
    if (points[i].x() < points[i0].x()) i0 = int(i);
    if (points[i].x() > points[i1].x()) i1 = int(i);
  }
  if ((points[i1] - points[i0]).norm() < eps) {
    for (size_t i = 0; i < points.size(); ++i)
      for (size_t j = i + 1; j < points.size(); ++j)
        if ((points[j] - points[i]).norm() > (points[i1] - points[i0]).norm()) {
          i0 = int(i);
          i1 = int(j);
        }
  }
  if ((points[i1] - points[i0]).norm() < eps)
    throw Error(ErrorCode::DegenerateHull, "all points coincide");

  int i2 = -1;
  double best = eps;
  Vec3 dir = (points[i1] - points[i0]).normalized();
  for (size_t i = 0; i < points.size(); ++i) {
    Vec3 d = points[i] - points[i0];
    double dist = (d - d.dot(dir) * dir).norm();
    if (dist > best) {
      best = dist;
      i2 = int(i);
    }
  }
  if (i2 < 0) throw Error(ErrorCode::DegenerateHull, "points are collinear");

  Vec3 plane_n = (points[i1] - points[i0]).cross(points[i2] - points[i0]).normalized();
  int i3 = -1;
  best = eps;
  for (size_t i = 0; i < points.size(); ++i) {
    double dist = std::abs(plane_n.dot(points[i] - points[i0]));
    if (dist > best) {
      best = dist;
      i3 = int(i);
    }
  }
  if (i3 < 0) throw Error(ErrorCode::DegenerateHull, "points are coplanar");

  Vec3 interior = (points[i0] + points[i1] + points[i2] + points[i3]) / 4.0;

  std::vector<HullFace> faces;
  faces.push_back(make_face(points, i0, i1, i2, interior));
  faces.push_back(make_face(points, i0, i1, i3, interior));
  faces.push_back(make_face(points, i0, i2, i3, interior));
  faces.push_back(make_face(points, i1, i2, i3, interior));

  auto assign_outside = [&](HullFace& f, const std::vector<int>& candidates) {
    for (int i : candidates)
      if (f.normal.dot(points[i]) > f.offset + eps) f.outside.push_back(i);
  };
  std::vector<int> all(points.size());
  for (size_t i = 0; i < points.size(); ++i) all[i] = int(i);
  for (auto& f : faces) assign_outside(f, all);

  for (;;) {
    int fi = -1;
    for (size_t i = 0; i < faces.size(); ++i)
      if (faces[i].alive && !faces[i].outside.empty()) {
        fi = int(i);
        break;
      }
    if (fi < 0) break;

    // Farthest outside point of that face.
    HullFace& f = faces[fi];
    int apex = f.outside[0];
    double far = f.normal.dot(points[apex]) - f.offset;
    for (int i : f.outside) {
      double d = f.normal.dot(points[i]) - f.offset;
      if (d > far) {
        far = d;
        apex = i;
      }
    }

    // Visible faces and horizon.
    std::vector<int> visible;
    for (size_t i = 0; i < faces.size(); ++i)
      if (faces[i].alive && faces[i].normal.dot(points[apex]) > faces[i].offset + eps)
        visible.push_back(int(i));

    std::map<std::pair<int, int>, int> edge_count;
    std::vector<int> orphan;
    for (int vi : visible) {
      const auto& vf = faces[vi];
      int e[3][2] = {{vf.a, vf.b}, {vf.b, vf.c}, {vf.c, vf.a}};
      for (auto& ed : e) {
        auto k = std::minmax(ed[0], ed[1]);
        edge_count[{k.first, k.second}]++;
      }
      for (int p : vf.outside) orphan.push_back(p);
      faces[vi].alive = false;
    }
    std::sort(orphan.begin(), orphan.end());
    orphan.erase(std::unique(orphan.begin(), orphan.end()), orphan.end());

    for (int vi : visible) {
      const auto& vf = faces[vi];
      int e[3][2] = {{vf.a, vf.b}, {vf.b, vf.c}, {vf.c, vf.a}};
      for (auto& ed : e) {
        auto k = std::minmax(ed[0], ed[1]);
        if (edge_count[{k.first, k.second}] != 1) continue;  // interior edge
        HullFace nf = make_face(points, ed[0], ed[1], apex, interior);
        assign_outside(nf, orphan);
        faces.push_back(nf);
      }
    }
  }

  // Collect live faces; merge coplanar planes; gather vertices.
  ConvexHull hull;
  std::set<int> vert_idx;
  for (const auto& f : faces) {
    if (!f.alive) continue;
    vert_idx.insert(f.a);
    vert_idx.insert(f.b);
    vert_idx.insert(f.c);
    bool merged = false;
    for (const auto& h : hull.half_spaces)
      if (h.normal.dot(f.normal) > 1.0 - 1e-9 && std::abs(h.offset - f.offset) < 1e-7) {
        merged = true;
        break;
      }
    if (!merged) hull.half_spaces.push_back({f.normal, f.offset});
  }
  for (int i : vert_idx) hull.vertices.push_back(points[i]);
  return hull;
}

// Outer parallel body of the planes: every half-space moves outward by
// `offset`, vertices are re-solved from their active plane sets.
inline ConvexHull expand_hull(const ConvexHull& hull, double offset) {
  if (offset < 0) throw Error(ErrorCode::InputError, "expansion offset must be >= 0");
  ConvexHull out;
  out.half_spaces = hull.half_spaces;
  for (auto& h : out.half_spaces) h.offset += offset;

  for (const auto& v : hull.vertices) {
    std::vector<const HalfSpace*> active;
    for (const auto& h : hull.half_spaces)
      if (std::abs(h.normal.dot(v) - h.offset) < 1e-7) active.push_back(&h);
    if (active.size() < 3) {
      out.vertices.push_back(v);  // numerically flat corner; keep as-is
      continue;
    }
    Eigen::MatrixXd a(active.size(), 3);
    Eigen::VectorXd b(active.size());
    for (size_t i = 0; i < active.size(); ++i) {
      a.row(i) = active[i]->normal.transpose();
      b(i) = active[i]->offset + offset;
    }
    out.vertices.push_back(a.colPivHouseholderQr().solve(b));
  }
  return out;
}

// Exit point of a ray whose origin lies inside the hull.
inline Vec3 ray_hull_intersect(const Vec3& origin, const Direction3& direction,
                               const ConvexHull& hull) {
  if (!hull.contains(origin))
    throw Error(ErrorCode::OriginOutsideHull, "ray origin outside hull");
  const Vec3& d = direction.vec();
  double t_exit = std::numeric_limits<double>::max();
  for (const auto& h : hull.half_spaces) {
    double denom = h.normal.dot(d);
    if (denom > 1e-12) {
      double t = (h.offset - h.normal.dot(origin)) / denom;
      t_exit = std::min(t_exit, t);
    }
  }
  if (t_exit == std::numeric_limits<double>::max())
    throw Error(ErrorCode::NoIntersection, "ray never exits hull");
  return origin + std::max(0.0, t_exit) * d;
}

}  // namespace dexgrasp
