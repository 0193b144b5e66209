#pragma once

#include <algorithm>
#include <cmath>

#include "dexgrasp/cloud.hpp"
#include "dexgrasp/image.hpp"
#include "dexgrasp/mesh.hpp"

namespace dexgrasp {

struct PinholeCamera {
  double fx = 600, fy = 600, cx = 320, cy = 240;
  int width = 640, height = 480;
  Mat3 r = Mat3::Identity();  // world -> camera
  Vec3 t = Vec3::Zero();

  Vec3 world_to_camera(const Vec3& p) const { return r * p + t; }
  Vec3 camera_to_world(const Vec3& p) const { return r.transpose() * (p - t); }
  Vec3 center() const { return -r.transpose() * t; }  // camera position in world

  // Projects a world point; returns (u, v, z_cam).
  Vec3 project(const Vec3& p) const {
    Vec3 c = world_to_camera(p);
    return Vec3(fx * c.x() / c.z() + cx, fy * c.y() / c.z() + cy, c.z());
  }

  Vec3 back_project_pixel(double u, double v, double depth) const {
    Vec3 c((u - cx) / fx * depth, (v - cy) / fy * depth, depth);
    return camera_to_world(c);
  }

  bool valid() const { return fx > 0 && fy > 0 && width > 0 && height > 0; }
};

// Camera at `eye` looking at `target`, +y of the image pointing down-world-up.
inline PinholeCamera look_at(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3(0, 1, 0),
                             int width = 640, int height = 480, double focal = 600) {
  PinholeCamera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = focal;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  Vec3 fwd = (target - eye).normalized();            // camera +z
  Vec3 right = fwd.cross(up).normalized();           // camera +x
  if (!right.allFinite() || right.norm() < 0.5) right = fwd.cross(Vec3(1, 0, 0)).normalized();
  Vec3 down = fwd.cross(right);                      // camera +y (image rows grow downward)
  Mat3 r;
  r.row(0) = right.transpose();
  r.row(1) = down.transpose();
  r.row(2) = fwd.transpose();
  cam.r = r;
  cam.t = -r * eye;
  return cam;
}

// Frames the object so it fills roughly `fill` of the image height.
inline PinholeCamera auto_frame(const TriMesh& mesh, const Vec3& view_dir = Vec3(0, -0.3, -1),
                                double fill = 0.6, int width = 640, int height = 480,
                                double focal = 600) {
  auto [lo, hi] = mesh.bounds();
  Vec3 center = 0.5 * (lo + hi);
  double radius = 0.5 * (hi - lo).norm();
  double dist = focal * 2.0 * radius / (fill * height);
  dist = std::max(dist, radius * 1.5);
  Vec3 dir = view_dir.normalized();
  return look_at(center - dist * dir, center, Vec3(0, 1, 0), width, height, focal);
}

struct SceneMesh {
  const TriMesh* mesh;
  Color color;
};

struct RenderResult {
  Image color;
  DepthImage depth;
};

// Z-buffered flat-shaded rasterizer with a headlight at the camera.
inline RenderResult render(const std::vector<SceneMesh>& scene, const PinholeCamera& cam) {
  if (!cam.valid()) throw Error(ErrorCode::InvalidCamera, "zero-area image or bad intrinsics");
  RenderResult out;
  out.color = Image(cam.width, cam.height, {20, 20, 24});
  out.depth = DepthImage(cam.width, cam.height);
  const double z_near = 1e-4;

  for (const auto& sm : scene) {
    const TriMesh& mesh = *sm.mesh;
    for (const auto& [ia, ib, ic] : mesh.faces) {
      Vec3 pa = cam.world_to_camera(mesh.vertices[ia]);
      Vec3 pb = cam.world_to_camera(mesh.vertices[ib]);
      Vec3 pc = cam.world_to_camera(mesh.vertices[ic]);
      if (pa.z() < z_near || pb.z() < z_near || pc.z() < z_near) continue;

      auto to_px = [&](const Vec3& p) {
        return Eigen::Vector2d(cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy);
      };
      Eigen::Vector2d a = to_px(pa), b = to_px(pb), c = to_px(pc);
      double area = (b.x() - a.x()) * (c.y() - a.y()) - (b.y() - a.y()) * (c.x() - a.x());
      if (std::abs(area) < 1e-12) continue;

      // flat shade: headlight at the camera
      Vec3 n = (pb - pa).cross(pc - pa);
      double nl = n.norm();
      double lambert = nl > 1e-15 ? std::abs(n.dot(pa.normalized())) / nl : 0.0;
      double shade = 0.25 + 0.75 * lambert;
      Color lit{uint8_t(sm.color.r * shade), uint8_t(sm.color.g * shade),
                uint8_t(sm.color.b * shade)};

      int min_x = std::max(0, int(std::floor(std::min({a.x(), b.x(), c.x()}))));
      int max_x = std::min(cam.width - 1, int(std::ceil(std::max({a.x(), b.x(), c.x()}))));
      int min_y = std::max(0, int(std::floor(std::min({a.y(), b.y(), c.y()}))));
      int max_y = std::min(cam.height - 1, int(std::ceil(std::max({a.y(), b.y(), c.y()}))));

      double inv_za = 1.0 / pa.z(), inv_zb = 1.0 / pb.z(), inv_zc = 1.0 / pc.z();
      for (int y = min_y; y <= max_y; ++y)
        for (int x = min_x; x <= max_x; ++x) {
          Eigen::Vector2d p(x + 0.5, y + 0.5);
          double w0 = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
          double w1 = (c.x() - b.x()) * (p.y() - b.y()) - (c.y() - b.y()) * (p.x() - b.x());
          double w2 = (a.x() - c.x()) * (p.y() - c.y()) - (a.y() - c.y()) * (p.x() - c.x());
          bool inside = area > 0 ? (w0 >= 0 && w1 >= 0 && w2 >= 0)
                                 : (w0 <= 0 && w1 <= 0 && w2 <= 0);
          if (!inside) continue;
          double la = w1 / area, lb = w2 / area, lc = w0 / area;
          double inv_z = la * inv_za + lb * inv_zb + lc * inv_zc;
          double z = 1.0 / inv_z;
          float& zb = out.depth.at(x, y);
          if (zb == 0.0f || z < zb) {
            zb = float(z);
            out.color.at(x, y) = lit;
          }
        }
    }
  }
  return out;
}

inline Mask2D silhouette(const DepthImage& depth) {
  Mask2D m(depth.width, depth.height);
  for (size_t i = 0; i < depth.depth.size(); ++i) m.data[i] = depth.depth[i] > 0 ? 1 : 0;
  return m;
}

// One 3D point per masked pixel with nonzero depth, camera -> world.
inline OrientedPointCloud back_project(const Mask2D& mask, const DepthImage& depth,
                                       const PinholeCamera& cam) {
  if (mask.width != depth.width || mask.height != depth.height)
    throw Error(ErrorCode::InputError, "mask/depth dimensions differ");
  OrientedPointCloud cloud;
  Vec3 cam_pos = cam.center();
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y)) continue;
      float d = depth.at(x, y);
      if (d <= 0) continue;
      Vec3 p = cam.back_project_pixel(x + 0.5, y + 0.5, d);
      cloud.points.push_back(p);
      Vec3 to_cam = cam_pos - p;
      double len = to_cam.norm();
      cloud.normals.push_back(len > 1e-12 ? Vec3(to_cam / len) : Vec3(0, 0, 1));
    }
  return cloud;
}

// ---------------------------------------------------------------------------
// Contour sampling

namespace detail {

// Largest 4-connected component, then Moore-neighbor boundary trace.
inline std::vector<Eigen::Vector2i> trace_largest_contour(const Mask2D& mask) {
  std::vector<int> comp(size_t(mask.width) * mask.height, -1);
  int n_comp = 0;
  std::vector<size_t> comp_size;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(x, y) || comp[size_t(y) * mask.width + x] >= 0) continue;
      std::vector<Eigen::Vector2i> stack{{x, y}};
      comp[size_t(y) * mask.width + x] = n_comp;
      size_t count = 0;
      while (!stack.empty()) {
        auto p = stack.back();
        stack.pop_back();
        ++count;
        const int dx[] = {1, -1, 0, 0}, dy[] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          int nx = p.x() + dx[k], ny = p.y() + dy[k];
          if (!mask.in_bounds(nx, ny) || !mask.at(nx, ny)) continue;
          int& c = comp[size_t(ny) * mask.width + nx];
          if (c < 0) {
            c = n_comp;
            stack.push_back({nx, ny});
          }
        }
      }
      comp_size.push_back(count);
      ++n_comp;
    }
  if (n_comp == 0) return {};
  int big = int(std::max_element(comp_size.begin(), comp_size.end()) - comp_size.begin());

  auto is_fg = [&](int x, int y) {
    return mask.in_bounds(x, y) && comp[size_t(y) * mask.width + x] == big;
  };

  // start: topmost-leftmost pixel of the component
  Eigen::Vector2i start(-1, -1);
  for (int y = 0; y < mask.height && start.x() < 0; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (is_fg(x, y)) {
        start = {x, y};
        break;
      }

  // Moore neighborhood ring, clockwise in image coordinates (y down),
  // starting from west.
  const int mx[] = {-1, -1, 0, 1, 1, 1, 0, -1};
  const int my[] = {0, -1, -1, -1, 0, 1, 1, 1};
  auto dir_index = [&](const Eigen::Vector2i& from, const Eigen::Vector2i& to) {
    Eigen::Vector2i d = to - from;
    for (int k = 0; k < 8; ++k)
      if (d.x() == mx[k] && d.y() == my[k]) return k;
    return 0;
  };

  std::vector<Eigen::Vector2i> contour;
  Eigen::Vector2i cur = start;
  int bdir = 0;  // direction (cur -> last visited background pixel); start's west is background
  const int start_bdir = bdir;
  size_t cap = size_t(mask.width) * mask.height * 4 + 16;
  for (size_t step = 0; step < cap; ++step) {
    contour.push_back(cur);
    bool found = false;
    for (int k = 1; k <= 8; ++k) {
      int d = (bdir + k) % 8;
      Eigen::Vector2i n(cur.x() + mx[d], cur.y() + my[d]);
      if (is_fg(n.x(), n.y())) {
        // clockwise predecessor of n is the last background pixel seen
        int prev_d = (bdir + k - 1) % 8;
        Eigen::Vector2i back(cur.x() + mx[prev_d], cur.y() + my[prev_d]);
        bdir = dir_index(n, back);
        cur = n;
        found = true;
        break;
      }
    }
    if (!found) break;  // isolated pixel
    if (cur == start && bdir == start_bdir) break;  // Jacob's stopping criterion
  }
  return contour;
}

}  // namespace detail

// n points uniformly spaced by arc length along the largest outer contour.
inline std::vector<Eigen::Vector2i> sample_mask_contour(const Mask2D& mask, size_t n) {
  if (mask.empty()) throw Error(ErrorCode::EmptyMask, "contour of empty mask");
  if (n < 2) throw Error(ErrorCode::InputError, "need at least 2 contour samples");
  auto contour = detail::trace_largest_contour(mask);
  if (contour.empty()) throw Error(ErrorCode::EmptyMask, "no contour found");

  std::vector<double> arc(contour.size() + 1, 0.0);
  for (size_t i = 0; i < contour.size(); ++i) {
    const auto& a = contour[i];
    const auto& b = contour[(i + 1) % contour.size()];
    arc[i + 1] = arc[i] + (a - b).cast<double>().norm();
  }
  double total = arc.back();
  std::vector<Eigen::Vector2i> out;
  out.reserve(n);
  size_t seg = 0;
  for (size_t k = 0; k < n; ++k) {
    double target = total * double(k) / double(n);
    while (seg + 1 < arc.size() - 1 && arc[seg + 1] <= target) ++seg;
    out.push_back(contour[seg % contour.size()]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Imagination composites

struct ImaginationTile {
  std::string label;
  int candidate_index;
};

struct ImaginationComposite {
  Image image;
  std::vector<ImaginationTile> tiles;
};

// One tile per candidate: hand+object next to hand-only, numeric label.
// Rendering callback maps candidate index -> (hand mesh).
inline ImaginationComposite compose_imagination(const std::vector<RenderResult>& hand_object,
                                                const std::vector<RenderResult>& hand_only) {
  size_t k = hand_object.size();
  if (k < 1 || k > 12) throw Error(ErrorCode::InputError, "need 1..12 candidates");
  int tw = hand_object[0].color.width * 2;
  int th = hand_object[0].color.height;
  int cols = int(std::ceil(std::sqrt(double(k))));
  int rows = int(std::ceil(double(k) / cols));
  ImaginationComposite out;
  out.image = Image(tw * cols, th * rows, {0, 0, 0});
  for (size_t i = 0; i < k; ++i) {
    int cx = int(i) % cols, cy = int(i) / cols;
    auto blit = [&](const Image& src, int ox, int oy) {
      for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) out.image.at(ox + x, oy + y) = src.at(x, y);
    };
    blit(hand_object[i].color, cx * tw, cy * th);
    blit(hand_only[i].color, cx * tw + tw / 2, cy * th);
    std::string label = std::to_string(i + 1);
    stamp_label(out.image, cx * tw + 8, cy * th + 8, label, {255, 255, 0}, 4);
    out.tiles.push_back({label, int(i)});
  }
  return out;
}

}  // namespace dexgrasp
