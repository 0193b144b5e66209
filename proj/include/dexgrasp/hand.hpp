#pragma once

#include <fstream>

#include "dexgrasp/cloud.hpp"
#include "dexgrasp/core.hpp"

#include <nlohmann/json.hpp>

namespace dexgrasp {

// Canonical hand frame: palm centered at the origin, fingers extending
// along +y, palm inward normal +z, thumb on the +x side.

struct Capsule {
  Vec3 p0, p1;  // axis endpoints, link-local
  double radius = 0.008;
};

struct HandLink {
  std::string name;
  int parent = -1;       // index into links, -1 for the palm root
  Mat3 offset_r;         // fixed transform from parent link frame
  Vec3 offset_t;
  Capsule capsule;
  int finger = 0;        // 0 palm, 1 thumb, 2 index, 3 middle, 4 ring, 5 little
  bool is_palm = false;
  bool functional_region = false;  // thumb/index distal two links
};

struct HandJoint {
  std::string name;
  int link;   // the link this joint rotates (about its offset frame)
  Vec3 axis;  // unit, in the link's pre-rotation frame
  double lo, hi;  // limits, rad
};

struct GraspPose {
  Vec3 translation = Vec3::Zero();
  Quat rotation = Quat::Identity();
  Eigen::Matrix<double, 16, 1> theta = Eigen::Matrix<double, 16, 1>::Zero();

  bool finite() const {
    return translation.allFinite() && rotation.coeffs().allFinite() && theta.allFinite();
  }
};

struct GraspType {
  std::string name;
  std::string description;
  Eigen::Matrix<double, 16, 1> theta;
};

struct HandSurface {
  std::vector<Vec3> vertices;   // world frame
  std::vector<Vec3> normals;    // world frame, unit
  std::vector<int> link_id;
  std::vector<int> finger_id;
  std::vector<uint8_t> functional;
  std::vector<uint8_t> palm_back;
  // Per-link world transforms, for capsule queries and Jacobians.
  std::vector<Mat3> link_r;
  std::vector<Vec3> link_t;

  size_t size() const { return vertices.size(); }
};

using ContactProbabilityMap = std::vector<double>;

class HandKinematics {
 public:
  std::vector<HandLink> links;
  std::vector<HandJoint> joints;  // exactly 16, fixed order

  // Local-frame sample points, filled by sample_vertices().
  struct LocalVertex {
    Vec3 p, n;
    int link;
  };
  std::vector<LocalVertex> local_vertices;

  int joint_of_link(int link) const {
    for (size_t j = 0; j < joints.size(); ++j)
      if (joints[j].link == link) return int(j);
    return -1;
  }

  Eigen::Matrix<double, 16, 1> clamp_to_limits(const Eigen::Matrix<double, 16, 1>& theta) const {
    Eigen::Matrix<double, 16, 1> out = theta;
    for (int i = 0; i < 16; ++i) out(i) = std::clamp(out(i), joints[i].lo, joints[i].hi);
    return out;
  }

  // World transform per link for a pose.
  void link_transforms(const GraspPose& pose, std::vector<Mat3>& r, std::vector<Vec3>& t) const {
    if (!pose.finite()) throw Error(ErrorCode::InvalidPose, "non-finite pose");
    r.resize(links.size());
    t.resize(links.size());
    Mat3 root_r = pose.rotation.normalized().toRotationMatrix();
    for (size_t i = 0; i < links.size(); ++i) {
      const auto& link = links[i];
      Mat3 pr = link.parent < 0 ? root_r : r[link.parent];
      Vec3 pt = link.parent < 0 ? pose.translation : t[link.parent];
      Mat3 jr = Mat3::Identity();
      int j = joint_of_link(int(i));
      if (j >= 0) jr = Eigen::AngleAxisd(pose.theta(j), joints[j].axis).toRotationMatrix();
      r[i] = pr * link.offset_r * jr;
      t[i] = pr * link.offset_t + pt;
    }
  }

  HandSurface forward_kinematics(const GraspPose& pose) const {
    HandSurface s;
    link_transforms(pose, s.link_r, s.link_t);
    s.vertices.reserve(local_vertices.size());
    for (const auto& lv : local_vertices) {
      s.vertices.push_back(s.link_r[lv.link] * lv.p + s.link_t[lv.link]);
      s.normals.push_back(s.link_r[lv.link] * lv.n);
      s.link_id.push_back(lv.link);
      const auto& link = links[lv.link];
      s.finger_id.push_back(link.finger);
      s.functional.push_back(link.functional_region ? 1 : 0);
      // Back of the hand: palm samples whose local normal faces -z.
      s.palm_back.push_back(link.is_palm && lv.n.z() < -0.5 ? 1 : 0);
    }
    return s;
  }

  // Analytic Jacobian of every surface vertex w.r.t. the 22 parameters
  // (3 translation, 3 rotation increment applied as exp(w)R about the hand
  // origin, 16 joint angles). Row-blocks of 3 per vertex.
  std::vector<Eigen::Matrix<double, 3, 22>> fk_jacobian(const GraspPose& pose,
                                                        const HandSurface& s) const {
    // Joint world axis and origin for each joint.
    std::vector<Vec3> axis_w(joints.size()), origin_w(joints.size());
    for (size_t j = 0; j < joints.size(); ++j) {
      int link = joints[j].link;
      const auto& lk = links[link];
      Mat3 pr = lk.parent < 0 ? pose.rotation.toRotationMatrix() : s.link_r[lk.parent];
      Vec3 pt = lk.parent < 0 ? pose.translation : s.link_t[lk.parent];
      axis_w[j] = pr * lk.offset_r * joints[j].axis;
      origin_w[j] = pr * lk.offset_t + pt;
    }
    // Ancestor chain per link (joint indices from root to leaf).
    std::vector<std::vector<int>> chain(links.size());
    for (size_t i = 0; i < links.size(); ++i) {
      int cur = int(i);
      while (cur >= 0) {
        int j = joint_of_link(cur);
        if (j >= 0) chain[i].push_back(j);
        cur = links[cur].parent;
      }
    }
    std::vector<Eigen::Matrix<double, 3, 22>> jac(s.size());
    for (size_t v = 0; v < s.size(); ++v) {
      auto& m = jac[v];
      m.setZero();
      m.block<3, 3>(0, 0).setIdentity();
      Vec3 lever = s.vertices[v] - pose.translation;
      m.block<3, 3>(0, 3) = -skew(lever);  // column k = e_k x lever
      for (int j : chain[s.link_id[v]]) {
        Vec3 arm = s.vertices[v] - origin_w[j];
        m.col(6 + j) = axis_w[j].cross(arm);
      }
    }
    return jac;
  }

  std::pair<Direction3, Direction3> palm_and_finger_directions(const GraspPose& pose) const {
    if (!pose.finite()) throw Error(ErrorCode::InvalidPose, "non-finite pose");
    Mat3 r = pose.rotation.toRotationMatrix();
    return {Direction3(r * Vec3(0, 0, 1)), Direction3(r * Vec3(0, 1, 0))};
  }

  // Capsules in world frame for self-penetration checks.
  struct WorldCapsule {
    Vec3 p0, p1;
    double radius;
    int link;
  };
  std::vector<WorldCapsule> world_capsules(const HandSurface& s) const {
    std::vector<WorldCapsule> out;
    for (size_t i = 0; i < links.size(); ++i) {
      const auto& c = links[i].capsule;
      out.push_back({s.link_r[i] * c.p0 + s.link_t[i], s.link_r[i] * c.p1 + s.link_t[i],
                     c.radius, int(i)});
    }
    return out;
  }

  bool adjacent(int a, int b) const {
    return links[a].parent == b || links[b].parent == a;
  }

  void sample_vertices(int per_link = 40);
};

// ---------------------------------------------------------------------------
// Geometry sampling: capsule links at `per_link` points, palm as a sampled
// box shell.

inline void HandKinematics::sample_vertices(int per_link) {
  local_vertices.clear();
  auto is_leaf = [&](size_t li) {
    for (const auto& l : links)
      if (l.parent == int(li)) return false;
    return true;
  };
  for (size_t li = 0; li < links.size(); ++li) {
    const auto& link = links[li];
    // Distal links carry most of the contact; oversample them so penetration
    // there is resolved as strongly as the pull terms that drive it.
    int budget = is_leaf(li) ? 3 * per_link : per_link;
    if (link.is_palm) {
      // Box shell 9 x 8 x 2.5 cm sampled on a fixed grid.
      Vec3 he(0.045, 0.04, 0.0125);
      const int n = 5;
      for (int face = 0; face < 6; ++face) {
        int axis = face / 2;
        double sign = face % 2 ? 1.0 : -1.0;
        for (int u = 0; u < n; ++u)
          for (int v = 0; v < n; ++v) {
            if (axis != 2 && (u % 2 || v % 2)) continue;  // fewer side samples
            double fu = -1.0 + 2.0 * (u + 0.5) / n;
            double fv = -1.0 + 2.0 * (v + 0.5) / n;
            Vec3 p, nrm = Vec3::Zero();
            nrm[axis] = sign;
            if (axis == 0) p = Vec3(sign * he.x(), fu * he.y(), fv * he.z());
            else if (axis == 1) p = Vec3(fu * he.x(), sign * he.y(), fv * he.z());
            else p = Vec3(fu * he.x(), fv * he.y(), sign * he.z());
            local_vertices.push_back({p, nrm, int(li)});
          }
      }
      continue;
    }
    const auto& c = link.capsule;
    Vec3 axis = c.p1 - c.p0;
    double len = axis.norm();
    Vec3 az = len > 1e-12 ? Vec3(axis / len) : Vec3(0, 1, 0);
    Vec3 ax = std::abs(az.x()) < 0.9 ? az.cross(Vec3(1, 0, 0)).normalized()
                                     : az.cross(Vec3(0, 0, 1)).normalized();
    Vec3 ay = az.cross(ax);
    // Split the budget between the cylindrical body and the two hemisphere
    // caps by surface area, so fingertip contact is resolved as finely as
    // the sides (penetration forces scale with local sample density).
    int n_caps = std::max(2, int(std::round(budget * 2.0 * c.radius / (len + 2.0 * c.radius))));
    int n_cyl = std::max(8, budget - n_caps);
    int around = std::max(6, int(std::round(std::sqrt(2.0 * n_cyl))));
    int rings = std::max(2, n_cyl / around);
    for (int r = 0; r < rings; ++r) {
      double t = rings > 1 ? double(r) / (rings - 1) : 0.5;
      Vec3 center = c.p0 + t * axis;
      for (int k = 0; k < around; ++k) {
        double a = 2.0 * M_PI * (k + 0.5 * (r % 2)) / around;
        Vec3 nrm = std::cos(a) * ax + std::sin(a) * ay;
        local_vertices.push_back({center + c.radius * nrm, nrm, int(li)});
      }
    }
    // Hemisphere caps: golden-spiral samples from pole to equator.
    int n_hemi = std::max(1, n_caps / 2);
    auto add_cap = [&](const Vec3& center, const Vec3& pole) {
      for (int i = 0; i < n_hemi; ++i) {
        double ct = 1.0 - (i + 0.5) / n_hemi;
        double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
        double phi = 2.399963229728653 * i;
        Vec3 nrm = ct * pole + st * (std::cos(phi) * ax + std::sin(phi) * ay);
        local_vertices.push_back({center + c.radius * nrm, nrm, int(li)});
      }
    };
    add_cap(c.p0, -az);
    add_cap(c.p1, az);
  }
}

// ---------------------------------------------------------------------------
// Default 16-DoF hand: thumb 4 joints, index/middle/ring/little 3 each.
// Joint order: thumb {cmc_abd, cmc_flex, mcp, ip}, then per finger
// {mcp, pip, dip} for index, middle, ring, little.

inline HandKinematics make_default_hand(int per_link = 40) {
  HandKinematics kin;
  auto add_link = [&](const std::string& name, int parent, const Mat3& r, const Vec3& t,
                      double length, double radius, int finger, bool functional) {
    HandLink link;
    link.name = name;
    link.parent = parent;
    link.offset_r = r;
    link.offset_t = t;
    link.capsule = {Vec3(0, 0, 0), Vec3(0, length, 0), radius};
    link.finger = finger;
    link.functional_region = functional;
    kin.links.push_back(link);
    return int(kin.links.size()) - 1;
  };
  auto add_joint = [&](const std::string& name, int link, const Vec3& axis, double lo, double hi) {
    kin.joints.push_back({name, link, axis, lo, hi});
  };

  HandLink palm;
  palm.name = "palm";
  palm.parent = -1;
  palm.offset_r = Mat3::Identity();
  palm.offset_t = Vec3::Zero();
  palm.capsule = {Vec3(-0.035, 0, 0), Vec3(0.035, 0, 0), 0.0125};
  palm.finger = 0;
  palm.is_palm = true;
  kin.links.push_back(palm);

  // Thumb: base on the +x edge, angled outward; flexion moves toward +z.
  Mat3 thumb_base = (Eigen::AngleAxisd(-0.9, Vec3::UnitZ()) *
                     Eigen::AngleAxisd(0.5, Vec3::UnitY())).toRotationMatrix();
  int t0 = add_link("thumb_meta", 0, thumb_base, Vec3(0.045, -0.015, 0.005), 0.045, 0.010, 1, false);
  add_joint("thumb_cmc_abd", t0, Vec3(0, 0, 1), -0.6, 0.6);
  int t1 = add_link("thumb_prox", t0, Mat3::Identity(), Vec3(0, 0.045, 0), 0.032, 0.009, 1, false);
  add_joint("thumb_cmc_flex", t1, Vec3(1, 0, 0), -0.4, 1.2);
  int t2 = add_link("thumb_mid", t1, Mat3::Identity(), Vec3(0, 0.032, 0), 0.025, 0.008, 1, true);
  add_joint("thumb_mcp", t2, Vec3(1, 0, 0), -0.2, 1.3);
  int t3 = add_link("thumb_dist", t2, Mat3::Identity(), Vec3(0, 0.025, 0), 0.022, 0.008, 1, true);
  add_joint("thumb_ip", t3, Vec3(1, 0, 0), -0.2, 1.4);
  (void)t3;

  struct FingerSpec {
    const char* name;
    double base_x;
    int finger;
    double prox, mid, dist;
  };
  const FingerSpec fingers[] = {{"index", 0.030, 2, 0.045, 0.028, 0.022},
                                {"middle", 0.010, 3, 0.050, 0.030, 0.023},
                                {"ring", -0.010, 4, 0.046, 0.028, 0.022},
                                {"little", -0.030, 5, 0.038, 0.024, 0.020}};
  for (const auto& f : fingers) {
    bool functional = f.finger == 2;  // index distal two links
    int p = add_link(std::string(f.name) + "_prox", 0, Mat3::Identity(),
                     Vec3(f.base_x, 0.04, 0), f.prox, 0.0085, f.finger, false);
    add_joint(std::string(f.name) + "_mcp", p, Vec3(1, 0, 0), -0.3, 1.7);
    int m = add_link(std::string(f.name) + "_mid", p, Mat3::Identity(), Vec3(0, f.prox, 0),
                     f.mid, 0.008, f.finger, functional);
    add_joint(std::string(f.name) + "_pip", m, Vec3(1, 0, 0), -0.1, 1.9);
    int d = add_link(std::string(f.name) + "_dist", m, Mat3::Identity(), Vec3(0, f.mid, 0),
                     f.dist, 0.0075, f.finger, functional);
    add_joint(std::string(f.name) + "_dip", d, Vec3(1, 0, 0), -0.1, 1.6);
    (void)d;
  }

  kin.sample_vertices(per_link);
  return kin;
}

// ---------------------------------------------------------------------------
// Contact probability map: C_j = exp(-d^2 / (2 sigma^2)), palm-back zeroed.

inline ContactProbabilityMap contact_probability(const HandSurface& surface,
                                                 const OrientedPointCloud& object,
                                                 double sigma = 0.02) {
  if (object.empty()) throw Error(ErrorCode::EmptyCloud, "contact_probability on empty cloud");
  if (sigma <= 0) throw Error(ErrorCode::InputError, "sigma must be > 0");
  SpatialHash hash(object.points);
  ContactProbabilityMap c(surface.size());
  for (size_t j = 0; j < surface.size(); ++j) {
    if (surface.palm_back[j]) {
      c[j] = 0;
      continue;
    }
    auto [idx, d] = hash.nearest(surface.vertices[j]);
    (void)idx;
    c[j] = std::exp(-d * d / (2 * sigma * sigma));
  }
  return c;
}

// ---------------------------------------------------------------------------
// Grasp type library

inline Eigen::Matrix<double, 16, 1> theta_from(std::initializer_list<double> vals) {
  Eigen::Matrix<double, 16, 1> t;
  int i = 0;
  for (double v : vals) t(i++) = v;
  return t;
}

inline std::vector<GraspType> default_grasp_types() {
  std::vector<GraspType> lib;
  // Order: thumb{abd,flex,mcp,ip}, index{mcp,pip,dip}, middle, ring, little.
  lib.push_back({"power",
                 "whole-hand wrap, all fingers curl around the object",
                 theta_from({0.3, 0.5, 0.5, 0.4,  0.8, 0.9, 0.6,  0.8, 0.9, 0.6,
                             0.8, 0.9, 0.6,  0.8, 0.9, 0.6})});
  lib.push_back({"precision-pinch",
                 "thumb and index fingertips oppose for fine control",
                 theta_from({0.35, 0.7, 0.5, 0.4,  0.55, 0.5, 0.35,  1.1, 1.2, 0.8,
                             1.1, 1.2, 0.8,  1.1, 1.2, 0.8})});
  lib.push_back({"lateral-pinch",
                 "thumb presses against the side of the curled index finger",
                 theta_from({0.05, 0.55, 0.45, 0.4,  0.9, 1.0, 0.7,  1.1, 1.2, 0.8,
                             1.1, 1.2, 0.8,  1.1, 1.2, 0.8})});
  lib.push_back({"tripod",
                 "thumb, index and middle fingertips form a three-point grip",
                 theta_from({0.3, 0.65, 0.5, 0.4,  0.55, 0.55, 0.4,  0.55, 0.55, 0.4,
                             1.1, 1.2, 0.8,  1.1, 1.2, 0.8})});
  lib.push_back({"hook",
                 "fingers curl into a hook with the thumb out of the way",
                 theta_from({-0.4, 0.0, 0.0, 0.0,  0.4, 1.4, 1.0,  0.4, 1.4, 1.0,
                             0.4, 1.4, 1.0,  0.4, 1.4, 1.0})});
  return lib;
}

inline void save_grasp_types(const std::vector<GraspType>& lib, const std::string& path) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& g : lib) {
    nlohmann::json e;
    e["name"] = g.name;
    e["description"] = g.description;
    e["theta"] = std::vector<double>(g.theta.data(), g.theta.data() + 16);
    j.push_back(e);
  }
  std::ofstream f(path);
  f << j.dump(2) << "\n";
}

inline std::vector<GraspType> load_grasp_types(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::InputError, "cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  std::vector<GraspType> lib;
  for (const auto& e : j) {
    GraspType g;
    g.name = e.at("name").get<std::string>();
    g.description = e.at("description").get<std::string>();
    auto t = e.at("theta").get<std::vector<double>>();
    if (t.size() != 16) throw Error(ErrorCode::ConfigError, "grasp type needs 16 angles");
    for (int i = 0; i < 16; ++i) g.theta(i) = t[i];
    lib.push_back(g);
  }
  if (lib.empty()) throw Error(ErrorCode::ConfigError, "empty grasp type library " + path);
  return lib;
}

// ---------------------------------------------------------------------------
// Kinematics description file

inline void save_hand(const HandKinematics& kin, const std::string& path) {
  nlohmann::json j;
  for (const auto& link : kin.links) {
    nlohmann::json e;
    e["name"] = link.name;
    e["parent"] = link.parent;
    std::vector<double> r(link.offset_r.data(), link.offset_r.data() + 9);
    e["offset_r"] = r;
    e["offset_t"] = {link.offset_t.x(), link.offset_t.y(), link.offset_t.z()};
    e["capsule_p0"] = {link.capsule.p0.x(), link.capsule.p0.y(), link.capsule.p0.z()};
    e["capsule_p1"] = {link.capsule.p1.x(), link.capsule.p1.y(), link.capsule.p1.z()};
    e["capsule_radius"] = link.capsule.radius;
    e["finger"] = link.finger;
    e["is_palm"] = link.is_palm;
    e["functional"] = link.functional_region;
    j["links"].push_back(e);
  }
  for (const auto& joint : kin.joints) {
    nlohmann::json e;
    e["name"] = joint.name;
    e["link"] = joint.link;
    e["axis"] = {joint.axis.x(), joint.axis.y(), joint.axis.z()};
    e["limits"] = {joint.lo, joint.hi};
    j["joints"].push_back(e);
  }
  std::ofstream f(path);
  f << j.dump(2) << "\n";
}

inline HandKinematics load_hand(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::InputError, "cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(f);
  HandKinematics kin;
  for (const auto& e : j.at("links")) {
    HandLink link;
    link.name = e.at("name").get<std::string>();
    link.parent = e.at("parent").get<int>();
    auto r = e.at("offset_r").get<std::vector<double>>();
    std::copy(r.begin(), r.end(), link.offset_r.data());
    auto t = e.at("offset_t").get<std::vector<double>>();
    link.offset_t = Vec3(t[0], t[1], t[2]);
    auto p0 = e.at("capsule_p0").get<std::vector<double>>();
    auto p1 = e.at("capsule_p1").get<std::vector<double>>();
    link.capsule = {Vec3(p0[0], p0[1], p0[2]), Vec3(p1[0], p1[1], p1[2]),
                    e.at("capsule_radius").get<double>()};
    link.finger = e.at("finger").get<int>();
    link.is_palm = e.at("is_palm").get<bool>();
    link.functional_region = e.at("functional").get<bool>();
    kin.links.push_back(link);
  }
  for (const auto& e : j.at("joints")) {
    HandJoint joint;
    joint.name = e.at("name").get<std::string>();
    joint.link = e.at("link").get<int>();
    auto a = e.at("axis").get<std::vector<double>>();
    joint.axis = Vec3(a[0], a[1], a[2]);
    auto lim = e.at("limits").get<std::vector<double>>();
    joint.lo = lim[0];
    joint.hi = lim[1];
    kin.joints.push_back(joint);
  }
  if (kin.joints.size() != 16) throw Error(ErrorCode::ConfigError, "hand must have 16 joints");
  kin.sample_vertices();
  return kin;
}

// Segment-segment distance, for capsule penetration tests.
inline double segment_distance(const Vec3& p0, const Vec3& p1, const Vec3& q0, const Vec3& q1) {
  Vec3 d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
  double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0, t = 0;
  if (a <= 1e-15 && e <= 1e-15) return r.norm();
  if (a <= 1e-15) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    double c = d1.dot(r);
    if (e <= 1e-15) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      double b = d1.dot(d2);
      double denom = a * e - b * b;
      s = denom > 1e-15 ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0) {
        t = 0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1) {
        t = 1;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p0 + s * d1) - (q0 + t * d2)).norm();
}

}  // namespace dexgrasp
