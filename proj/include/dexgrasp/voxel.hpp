#pragma once

#include <algorithm>
#include <cmath>

#include "dexgrasp/mesh.hpp"

namespace dexgrasp {

namespace detail {

// All x-coordinates where the +x ray from (-inf, y, z) crosses the mesh.
// Parity against this list classifies every point on the line.
inline std::vector<double> x_crossings(const TriMesh& mesh, double y, double z) {
  std::vector<double> xs;
  for (const auto& [ia, ib, ic] : mesh.faces) {
    const Vec3& a = mesh.vertices[ia];
    const Vec3& b = mesh.vertices[ib];
    const Vec3& c = mesh.vertices[ic];
    // 2D point-in-triangle in the (y,z) plane, then solve for x.
    double d1 = (b.y() - a.y()) * (z - a.z()) - (b.z() - a.z()) * (y - a.y());
    double d2 = (c.y() - b.y()) * (z - b.z()) - (c.z() - b.z()) * (y - b.y());
    double d3 = (a.y() - c.y()) * (z - c.z()) - (a.z() - c.z()) * (y - c.y());
    bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
    bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
    if (has_neg && has_pos) continue;
    double denom = d1 + d2 + d3;
    if (std::abs(denom) < 1e-18) continue;  // projected triangle degenerate
    // Barycentric weights of (y,z) inside the projected triangle.
    double wa = d2 / denom, wb = d3 / denom, wc = d1 / denom;
    xs.push_back(wa * a.x() + wb * b.x() + wc * c.x());
  }
  std::sort(xs.begin(), xs.end());
  return xs;
}

inline bool parity_inside(const std::vector<double>& xs, double x) {
  size_t crossings = std::upper_bound(xs.begin(), xs.end(), x) - xs.begin();
  return (xs.size() - crossings) % 2 == 1;  // odd number of crossings ahead
}

}  // namespace detail

// Ray-parity point-in-mesh test along +x with a jittered origin to dodge
// edge and vertex hits.
inline bool point_in_mesh(const Vec3& p, const TriMesh& mesh) {
  const double j = 1e-7;
  auto xs = detail::x_crossings(mesh, p.y() + j, p.z() + j * 1.37);
  return detail::parity_inside(xs, p.x());
}

// Voxelized overlap volume in cm^3. Column scanline: one +x ray per (y,z)
// voxel column per mesh classifies every center in that column.
inline double intersection_volume(const TriMesh& a, const TriMesh& b, double voxel = 0.002) {
  if (voxel <= 0) throw Error(ErrorCode::InputError, "voxel size must be > 0");
  auto [lo_a, hi_a] = a.bounds();
  auto [lo_b, hi_b] = b.bounds();
  Vec3 lo = lo_a.cwiseMax(lo_b);
  Vec3 hi = hi_a.cwiseMin(hi_b);
  if ((hi - lo).minCoeff() <= 0) return 0.0;

  const double jy = voxel * 1e-4, jz = voxel * 1.37e-4;  // edge-dodging jitter
  long nx = long(std::ceil((hi.x() - lo.x()) / voxel));
  long ny = long(std::ceil((hi.y() - lo.y()) / voxel));
  long nz = long(std::ceil((hi.z() - lo.z()) / voxel));
  long count = 0;
  for (long iy = 0; iy < ny; ++iy) {
    double y = lo.y() + (iy + 0.5) * voxel + jy;
    for (long iz = 0; iz < nz; ++iz) {
      double z = lo.z() + (iz + 0.5) * voxel + jz;
      auto xs_a = detail::x_crossings(a, y, z);
      if (xs_a.empty()) continue;
      auto xs_b = detail::x_crossings(b, y, z);
      if (xs_b.empty()) continue;
      for (long ix = 0; ix < nx; ++ix) {
        double x = lo.x() + (ix + 0.5) * voxel;
        if (detail::parity_inside(xs_a, x) && detail::parity_inside(xs_b, x)) ++count;
      }
    }
  }
  return double(count) * voxel * voxel * voxel * 1e6;  // m^3 -> cm^3
}

}  // namespace dexgrasp
