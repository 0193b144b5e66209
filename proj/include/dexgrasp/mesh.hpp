#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dexgrasp/cloud.hpp"
#include "dexgrasp/core.hpp"

namespace dexgrasp {

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> faces;
  std::vector<Vec3> vertex_normals;  // unit, filled by compute_normals

  size_t face_count() const { return faces.size(); }

  Vec3 face_normal(size_t f) const {
    const auto& [a, b, c] = faces[f];
    Vec3 n = (vertices[b] - vertices[a]).cross(vertices[c] - vertices[a]);
    double len = n.norm();
    return len > 1e-15 ? Vec3(n / len) : Vec3(0, 0, 1);
  }

  double face_area(size_t f) const {
    const auto& [a, b, c] = faces[f];
    return 0.5 * (vertices[b] - vertices[a]).cross(vertices[c] - vertices[a]).norm();
  }

  double surface_area() const {
    double s = 0;
    for (size_t f = 0; f < faces.size(); ++f) s += face_area(f);
    return s;
  }

  Vec3 centroid() const {
    // Area-weighted surface centroid.
    Vec3 c = Vec3::Zero();
    double area = 0;
    for (size_t f = 0; f < faces.size(); ++f) {
      const auto& [a, b, e] = faces[f];
      double w = face_area(f);
      c += w * (vertices[a] + vertices[b] + vertices[e]) / 3.0;
      area += w;
    }
    return area > 0 ? Vec3(c / area) : c;
  }

  std::pair<Vec3, Vec3> bounds() const {
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::max());
    Vec3 hi = Vec3::Constant(std::numeric_limits<double>::lowest());
    for (const auto& v : vertices) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
    return {lo, hi};
  }

  void compute_normals() {
    vertex_normals.assign(vertices.size(), Vec3::Zero());
    for (size_t f = 0; f < faces.size(); ++f) {
      const auto& [a, b, c] = faces[f];
      Vec3 n = (vertices[b] - vertices[a]).cross(vertices[c] - vertices[a]);  // area-weighted
      vertex_normals[a] += n;
      vertex_normals[b] += n;
      vertex_normals[c] += n;
    }
    for (auto& n : vertex_normals) {
      double len = n.norm();
      n = len > 1e-15 ? Vec3(n / len) : Vec3(0, 0, 1);
    }
  }

  // Every edge shared by exactly two faces with opposite orientation.
  bool is_watertight() const {
    std::map<std::pair<int, int>, int> edges;
    for (const auto& [a, b, c] : faces) {
      edges[{a, b}]++;
      edges[{b, c}]++;
      edges[{c, a}]++;
    }
    for (const auto& [e, n] : edges) {
      if (n != 1) return false;
      auto it = edges.find({e.second, e.first});
      if (it == edges.end() || it->second != 1) return false;
    }
    return !faces.empty();
  }

  TriMesh transformed(const Mat3& r, const Vec3& t) const {
    TriMesh out = *this;
    for (auto& v : out.vertices) v = r * v + t;
    for (auto& n : out.vertex_normals) n = r * n;
    return out;
  }
};

// ---------------------------------------------------------------------------
// Primitives (test fixtures and the capsule hand share these).

inline TriMesh make_box(const Vec3& half_extent, const Vec3& center = Vec3::Zero()) {
  TriMesh m;
  for (int i = 0; i < 8; ++i)
    m.vertices.push_back(center + Vec3((i & 1 ? 1 : -1) * half_extent.x(),
                                       (i & 2 ? 1 : -1) * half_extent.y(),
                                       (i & 4 ? 1 : -1) * half_extent.z()));
  // CCW when viewed from outside.
  const int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                           {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
  for (const auto& q : quads) {
    m.faces.push_back({q[0], q[1], q[2]});
    m.faces.push_back({q[0], q[2], q[3]});
  }
  m.compute_normals();
  return m;
}

inline TriMesh make_icosphere(double radius, int subdivisions, const Vec3& center = Vec3::Zero()) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> verts = {{-1, t, 0}, {1, t, 0},  {-1, -t, 0}, {1, -t, 0},
                             {0, -1, t}, {0, 1, t},  {0, -1, -t}, {0, 1, -t},
                             {t, 0, -1}, {t, 0, 1},  {-t, 0, -1}, {-t, 0, 1}};
  for (auto& v : verts) v.normalize();
  std::vector<std::array<int, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11}, {1, 5, 9},  {5, 11, 4},
      {11, 10, 2}, {10, 7, 6}, {7, 1, 8},  {3, 9, 4},  {3, 4, 2},   {3, 2, 6},  {3, 6, 8},
      {3, 8, 9},  {4, 9, 5},  {2, 4, 11},  {6, 2, 10}, {8, 6, 7},   {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      auto k = std::minmax(a, b);
      auto it = midpoint.find(k);
      if (it != midpoint.end()) return it->second;
      Vec3 m = (verts[a] + verts[b]).normalized();
      verts.push_back(m);
      int idx = int(verts.size()) - 1;
      midpoint[k] = idx;
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& [a, b, c] : faces) {
      int ab = mid(a, b), bc = mid(b, c), ca = mid(c, a);
      next.push_back({a, ab, ca});
      next.push_back({b, bc, ab});
      next.push_back({c, ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }
  TriMesh m;
  for (const auto& v : verts) m.vertices.push_back(center + radius * v);
  m.faces = faces;
  m.compute_normals();
  return m;
}

// Closed cylinder along +y, centered at `center`.
inline TriMesh make_cylinder(double radius, double height, int segments = 48,
                             const Vec3& center = Vec3::Zero()) {
  TriMesh m;
  double hh = height / 2;
  for (int i = 0; i < segments; ++i) {
    double a = 2.0 * M_PI * i / segments;
    Vec3 rim(radius * std::cos(a), 0, radius * std::sin(a));
    m.vertices.push_back(center + rim + Vec3(0, -hh, 0));
    m.vertices.push_back(center + rim + Vec3(0, hh, 0));
  }
  int bottom_c = int(m.vertices.size());
  m.vertices.push_back(center + Vec3(0, -hh, 0));
  int top_c = int(m.vertices.size());
  m.vertices.push_back(center + Vec3(0, hh, 0));
  for (int i = 0; i < segments; ++i) {
    int j = (i + 1) % segments;
    int b0 = 2 * i, t0 = 2 * i + 1, b1 = 2 * j, t1 = 2 * j + 1;
    m.faces.push_back({b0, t0, b1});
    m.faces.push_back({b1, t0, t1});
    m.faces.push_back({bottom_c, b1, b0});
    m.faces.push_back({top_c, t0, t1});
  }
  m.compute_normals();
  return m;
}

// ---------------------------------------------------------------------------
// Surface sampling

inline OrientedPointCloud sample_surface(const TriMesh& mesh, size_t n, uint64_t seed) {
  if (mesh.faces.empty()) throw Error(ErrorCode::InvalidMesh, "mesh has no faces");
  if (n < 1) throw Error(ErrorCode::InputError, "sample count must be >= 1");

  std::vector<double> cdf(mesh.faces.size());
  double acc = 0;
  for (size_t f = 0; f < mesh.faces.size(); ++f) {
    acc += mesh.face_area(f);
    cdf[f] = acc;
  }
  if (acc <= 0) throw Error(ErrorCode::InvalidMesh, "mesh has zero surface area");

  Rng rng(seed);
  OrientedPointCloud cloud;
  cloud.points.reserve(n);
  cloud.normals.reserve(n);
  bool smooth = mesh.vertex_normals.size() == mesh.vertices.size();
  for (size_t k = 0; k < n; ++k) {
    double r = rng.next_double() * acc;
    size_t f = std::lower_bound(cdf.begin(), cdf.end(), r) - cdf.begin();
    if (f >= mesh.faces.size()) f = mesh.faces.size() - 1;
    const auto& [a, b, c] = mesh.faces[f];
    double u = rng.next_double(), v = rng.next_double();
    if (u + v > 1) {
      u = 1 - u;
      v = 1 - v;
    }
    double w = 1 - u - v;
    cloud.points.push_back(w * mesh.vertices[a] + u * mesh.vertices[b] + v * mesh.vertices[c]);
    Vec3 nrm;
    if (smooth) {
      nrm = w * mesh.vertex_normals[a] + u * mesh.vertex_normals[b] + v * mesh.vertex_normals[c];
      double len = nrm.norm();
      nrm = len > 1e-12 ? Vec3(nrm / len) : mesh.face_normal(f);
    } else {
      nrm = mesh.face_normal(f);
    }
    cloud.normals.push_back(nrm);
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// OBJ (ASCII) and PLY (binary little-endian) I/O

inline void save_obj(const TriMesh& mesh, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error(ErrorCode::InputError, "cannot write " + path);
  f.precision(9);
  for (const auto& v : mesh.vertices) f << "v " << v.x() << " " << v.y() << " " << v.z() << "\n";
  for (const auto& [a, b, c] : mesh.faces)
    f << "f " << a + 1 << " " << b + 1 << " " << c + 1 << "\n";
}

inline TriMesh load_obj(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::InputError, "cannot open " + path);
  TriMesh m;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      ss >> x >> y >> z;
      m.vertices.emplace_back(x, y, z);
    } else if (tag == "f") {
      std::vector<int> idx;
      std::string tok;
      while (ss >> tok) {
        // "v", "v/vt", "v/vt/vn", "v//vn" all start with the vertex index.
        idx.push_back(std::stoi(tok.substr(0, tok.find('/'))));
      }
      for (size_t i = 2; i < idx.size(); ++i)  // fan-triangulate polygons
        m.faces.push_back({idx[0] - 1, idx[i - 1] - 1, idx[i] - 1});
    }
  }
  if (m.faces.empty()) throw Error(ErrorCode::InvalidMesh, "no faces in " + path);
  for (const auto& [a, b, c] : m.faces)
    if (a < 0 || b < 0 || c < 0 || size_t(a) >= m.vertices.size() ||
        size_t(b) >= m.vertices.size() || size_t(c) >= m.vertices.size())
      throw Error(ErrorCode::InvalidMesh, "face index out of range in " + path);
  m.compute_normals();
  return m;
}

inline void save_ply(const TriMesh& mesh, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InputError, "cannot write " + path);
  f << "ply\nformat binary_little_endian 1.0\n"
    << "element vertex " << mesh.vertices.size() << "\n"
    << "property float x\nproperty float y\nproperty float z\n"
    << "element face " << mesh.faces.size() << "\n"
    << "property list uchar int vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    float p[3] = {float(v.x()), float(v.y()), float(v.z())};
    f.write(reinterpret_cast<const char*>(p), sizeof(p));
  }
  for (const auto& [a, b, c] : mesh.faces) {
    unsigned char n = 3;
    int idx[3] = {a, b, c};
    f.write(reinterpret_cast<const char*>(&n), 1);
    f.write(reinterpret_cast<const char*>(idx), sizeof(idx));
  }
}

inline TriMesh load_ply(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InputError, "cannot open " + path);
  std::string line;
  size_t n_verts = 0, n_faces = 0;
  bool binary_le = false;
  struct Prop { std::string type, name; };
  std::vector<Prop> vert_props;
  std::string cur_element;
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      binary_le = (fmt == "binary_little_endian");
    } else if (tag == "element") {
      std::string name;
      size_t count;
      ss >> name >> count;
      cur_element = name;
      if (name == "vertex") n_verts = count;
      if (name == "face") n_faces = count;
    } else if (tag == "property" && cur_element == "vertex") {
      Prop p;
      ss >> p.type >> p.name;
      if (p.type != "list") vert_props.push_back(p);
    } else if (tag == "end_header") {
      break;
    }
  }
  if (!binary_le) throw Error(ErrorCode::InputError, "expected binary_little_endian PLY: " + path);

  auto scalar_size = [](const std::string& t) -> size_t {
    if (t == "float" || t == "float32" || t == "int" || t == "int32" || t == "uint" ||
        t == "uint32")
      return 4;
    if (t == "double" || t == "float64") return 8;
    if (t == "short" || t == "ushort" || t == "int16" || t == "uint16") return 2;
    return 1;
  };

  TriMesh m;
  m.vertices.reserve(n_verts);
  for (size_t i = 0; i < n_verts; ++i) {
    double xyz[3] = {0, 0, 0};
    for (const auto& p : vert_props) {
      char buf[8];
      f.read(buf, scalar_size(p.type));
      double val = 0;
      if (p.type == "float" || p.type == "float32") {
        float v;
        std::memcpy(&v, buf, 4);
        val = v;
      } else if (p.type == "double" || p.type == "float64") {
        std::memcpy(&val, buf, 8);
      }
      if (p.name == "x") xyz[0] = val;
      if (p.name == "y") xyz[1] = val;
      if (p.name == "z") xyz[2] = val;
    }
    m.vertices.emplace_back(xyz[0], xyz[1], xyz[2]);
  }
  for (size_t i = 0; i < n_faces; ++i) {
    unsigned char cnt;
    f.read(reinterpret_cast<char*>(&cnt), 1);
    std::vector<int> idx(cnt);
    f.read(reinterpret_cast<char*>(idx.data()), cnt * sizeof(int));
    for (size_t k = 2; k < idx.size(); ++k) m.faces.push_back({idx[0], idx[k - 1], idx[k]});
  }
  if (!f) throw Error(ErrorCode::InputError, "truncated PLY " + path);
  if (m.faces.empty()) throw Error(ErrorCode::InvalidMesh, "no faces in " + path);
  m.compute_normals();
  return m;
}

inline TriMesh load_mesh(const std::string& path) {
  auto dot = path.rfind('.');
  std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
  for (auto& c : ext) c = char(std::tolower(c));
  if (ext == "obj") return load_obj(path);
  if (ext == "ply") return load_ply(path);
  throw Error(ErrorCode::InputError, "unsupported mesh format: " + path);
}

}  // namespace dexgrasp
