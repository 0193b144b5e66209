#pragma once

#include <fstream>
#include <set>
#include <sstream>

#include "dexgrasp/cloud.hpp"
#include "dexgrasp/hand.hpp"
#include "dexgrasp/mesh.hpp"
#include "dexgrasp/voxel.hpp"

#include <nlohmann/json.hpp>

namespace dexgrasp {

struct MetricReport {
  double p_vol_cm3 = 0;
  double p_dep_cm = 0;
  double sim_dis_cm = 0;
  bool sim_suc = false;
  bool part_acc = false;
  double sc_ratio = 0;
  bool twist = false;  // simulation metrics excluded when set
};

// ---------------------------------------------------------------------------
// Penetration metrics

inline std::pair<double, double> penetration_metrics(const TriMesh& hand_mesh,
                                                     const OrientedPointCloud& hand_vertices,
                                                     const TriMesh& object,
                                                     const OrientedPointCloud& object_surface,
                                                     double voxel = 0.002) {
  double p_vol = intersection_volume(hand_mesh, object, voxel);
  SpatialHash hash(object_surface.points);
  double max_depth = 0;
  for (const auto& v : hand_vertices.points)
    max_depth = std::max(max_depth, signed_penetration(v, object_surface, hash));
  return {p_vol, max_depth * 100.0};  // cm
}

inline std::pair<double, double> penetration_metrics(const HandSurface& surface,
                                                     const TriMesh& hand_mesh,
                                                     const TriMesh& object,
                                                     const OrientedPointCloud& object_surface,
                                                     double voxel = 0.002) {
  OrientedPointCloud verts;
  verts.points = surface.vertices;
  verts.normals = surface.normals;
  return penetration_metrics(hand_mesh, verts, object, object_surface, voxel);
}

// ---------------------------------------------------------------------------
// Quasi-static hold simulation. The hand is kinematic (infinite mass); the
// object is a rigid body under gravity held by penalty contacts at the hand
// surface vertices.

struct SimConfig {
  double dt = 1.0 / 240.0;
  int steps = 480;  // 2 s
  double gravity = 9.81;
  double mass = 0.3;
  double stiffness = 5000.0;  // N/m per contact
  double friction = 0.8;
  // Total normal stiffness is capped so the explicit integrator stays
  // stable (omega*dt <= 1); per-contact stiffness scales down when many
  // vertices touch at once.
  double stiffness_budget_factor = 1.0;
};

struct SimResult {
  double sim_dis_cm = 0;
  std::vector<int> contacts_per_step;
  Vec3 final_translation = Vec3::Zero();
};

inline Mat3 box_inertia(const Vec3& half_extent, double mass) {
  Mat3 inertia = Mat3::Zero();
  Vec3 full = 2 * half_extent;
  inertia(0, 0) = mass / 12.0 * (full.y() * full.y() + full.z() * full.z());
  inertia(1, 1) = mass / 12.0 * (full.x() * full.x() + full.z() * full.z());
  inertia(2, 2) = mass / 12.0 * (full.x() * full.x() + full.y() * full.y());
  return inertia;
}

inline SimResult simulate_displacement(const std::vector<Vec3>& hand_points,
                                       const OrientedPointCloud& object_surface,
                                       const SimConfig& cfg = {}) {
  if (object_surface.empty()) throw Error(ErrorCode::EmptyCloud, "simulating an empty object");
  SpatialHash hash(object_surface.points);

  // Body frame anchored at the surface centroid; bounding-box inertia proxy.
  Vec3 com = object_surface.centroid();
  Vec3 lo = object_surface.points[0], hi = object_surface.points[0];
  for (const auto& p : object_surface.points) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  Mat3 inertia_body = box_inertia(((hi - lo) / 2).cwiseMax(1e-4), cfg.mass);
  Mat3 inertia_body_inv = inertia_body.inverse();

  Vec3 x = com;  // world COM
  Vec3 v = Vec3::Zero(), omega = Vec3::Zero();
  Mat3 r = Mat3::Identity();
  // Budget both rigid-body modes: translational (k dt^2/m <= 1) and
  // rotational (k r^2 dt^2 / I <= 1) with the worst-case lever arm.
  double r_max = 1e-4;
  for (const auto& p : object_surface.points) r_max = std::max(r_max, (p - com).norm());
  double i_min = inertia_body.diagonal().minCoeff();
  double max_stiffness = cfg.stiffness_budget_factor / (cfg.dt * cfg.dt) *
                         std::min(cfg.mass, i_min / (r_max * r_max));

  SimResult result;
  result.contacts_per_step.reserve(cfg.steps);
  for (int step = 0; step < cfg.steps; ++step) {
    struct Contact {
      double depth;
      Vec3 point_w, normal_w;
    };
    std::vector<Contact> contacts;
    for (const auto& h : hand_points) {
      Vec3 h_local = com + r.transpose() * (h - x);
      auto [idx, dist] = hash.nearest(h_local);
      (void)dist;
      double depth = (object_surface.points[idx] - h_local).dot(object_surface.normals[idx]);
      if (depth <= 0) continue;
      Vec3 p_w = r * (object_surface.points[idx] - com) + x;
      Vec3 n_w = r * object_surface.normals[idx];
      contacts.push_back({depth, p_w, n_w});
    }
    result.contacts_per_step.push_back(int(contacts.size()));

    double n = double(std::max<size_t>(1, contacts.size()));
    double k_eff = std::min(cfg.stiffness, max_stiffness / n);
    double c_n = std::sqrt(k_eff * cfg.mass / n);

    Vec3 force(0, -cfg.gravity * cfg.mass, 0);
    Vec3 torque = Vec3::Zero();
    for (const auto& c : contacts) {
      Vec3 v_p = v + omega.cross(c.point_w - x);
      double fn_mag = k_eff * c.depth;
      Vec3 f = -(fn_mag + c_n * v_p.dot(c.normal_w)) * c.normal_w;
      Vec3 vt = v_p - v_p.dot(c.normal_w) * c.normal_w;
      double vt_norm = vt.norm();
      if (vt_norm > 1e-9) f -= std::min(cfg.friction * fn_mag, c_n * vt_norm) * (vt / vt_norm);
      force += f;
      torque += (c.point_w - x).cross(f);
    }

    // no gyroscopic term: omega x I omega under explicit Euler diverges for
    // torque-free spin, and the settling test only needs bounded dynamics
    Mat3 inertia_w_inv = r * inertia_body_inv * r.transpose();
    v += cfg.dt / cfg.mass * force;
    omega += cfg.dt * (inertia_w_inv * torque);
    x += cfg.dt * v;
    r = exp_so3(omega * cfg.dt) * r;
    r = Quat(r).normalized().toRotationMatrix();

    bool finite = x.allFinite() && v.allFinite() && omega.allFinite() && r.allFinite();
    if (!finite || v.norm() > 1e3 || omega.norm() > 1e5)
      throw Error(ErrorCode::SimulationDiverged,
                  "unbounded state at step " + std::to_string(step));
  }

  result.final_translation = x - com;
  result.sim_dis_cm = result.final_translation.norm() * 100.0;
  return result;
}

// True iff at least one contact is active at every step after the first
// 0.1 s and the penetration depth stays below 1 cm.
inline bool simulation_success(const SimResult& sim, double p_dep_cm, double dt = 1.0 / 240.0,
                               double settle_time = 0.1) {
  if (p_dep_cm >= 1.0) return false;
  for (size_t i = 0; i < sim.contacts_per_step.size(); ++i) {
    if (double(i + 1) * dt <= settle_time) continue;
    if (sim.contacts_per_step[i] < 1) return false;
  }
  return !sim.contacts_per_step.empty();
}

// ---------------------------------------------------------------------------
// Semantic contact metrics

inline bool part_accuracy(const HandSurface& surface, const OrientedPointCloud& object,
                          const std::set<int>& gt_parts, double epsilon_c = 0.005) {
  if (object.part_labels.size() != object.size())
    throw Error(ErrorCode::InputError, "object has no part labels");
  std::vector<Vec3> gt_points;
  for (size_t i = 0; i < object.size(); ++i)
    if (gt_parts.count(object.part_labels[i])) gt_points.push_back(object.points[i]);
  if (gt_points.empty()) return false;
  SpatialHash hash(gt_points);
  for (const auto& v : surface.vertices)
    if (hash.nearest(v).second <= epsilon_c) return true;
  return false;
}

inline double semantic_contact_ratio(const HandSurface& surface, const OrientedPointCloud& object,
                                     const std::set<int>& gt_parts, double epsilon_c = 0.005) {
  if (object.part_labels.size() != object.size())
    throw Error(ErrorCode::InputError, "object has no part labels");
  SpatialHash hash(object.points);
  size_t contacting = 0, correct = 0;
  for (size_t j = 0; j < surface.size(); ++j) {
    if (surface.finger_id[j] == 0) continue;  // palm excluded
    auto [idx, d] = hash.nearest(surface.vertices[j]);
    if (d > epsilon_c) continue;
    ++contacting;
    if (gt_parts.count(object.part_labels[idx])) ++correct;
  }
  return contacting == 0 ? 0.0 : double(correct) / double(contacting);
}

// ---------------------------------------------------------------------------
// Batch aggregation

struct TaskMetrics {
  std::string task;
  MetricReport report;
};

struct BatchSummary {
  nlohmann::json aggregate;
  std::string csv;
};

inline BatchSummary batch_evaluate(const std::vector<TaskMetrics>& tasks) {
  if (tasks.empty()) throw Error(ErrorCode::EmptyBatch, "no tasks to aggregate");
  std::ostringstream csv;
  csv << "task,p_vol_cm3,p_dep_cm,sim_dis_cm,sim_suc,part_acc,sc_ratio,twist\n";
  double p_vol = 0, p_dep = 0, sc = 0, sim_dis = 0;
  size_t part_ok = 0, sim_ok = 0, sim_count = 0;
  for (const auto& t : tasks) {
    const auto& r = t.report;
    csv << t.task << "," << r.p_vol_cm3 << "," << r.p_dep_cm << ",";
    if (r.twist)
      csv << ",,";
    else
      csv << r.sim_dis_cm << "," << int(r.sim_suc) << ",";
    csv << int(r.part_acc) << "," << r.sc_ratio << "," << int(r.twist) << "\n";
    p_vol += r.p_vol_cm3;
    p_dep += r.p_dep_cm;
    sc += r.sc_ratio;
    part_ok += r.part_acc ? 1 : 0;
    if (!r.twist) {
      sim_dis += r.sim_dis_cm;
      sim_ok += r.sim_suc ? 1 : 0;
      ++sim_count;
    }
  }
  double n = double(tasks.size());
  BatchSummary out;
  out.csv = csv.str();
  out.aggregate = {{"tasks", tasks.size()},
                   {"sim_tasks", sim_count},
                   {"p_vol_cm3", p_vol / n},
                   {"p_dep_cm", p_dep / n},
                   {"part_acc", double(part_ok) / n},
                   {"sc_ratio", sc / n}};
  if (sim_count > 0) {
    out.aggregate["sim_dis_cm"] = sim_dis / double(sim_count);
    out.aggregate["sim_suc"] = double(sim_ok) / double(sim_count);
  }
  return out;
}

inline void save_batch(const BatchSummary& summary, const std::string& csv_path,
                       const std::string& json_path) {
  std::ofstream c(csv_path);
  if (!c) throw Error(ErrorCode::InputError, "cannot write " + csv_path);
  c << summary.csv;
  std::ofstream j(json_path);
  if (!j) throw Error(ErrorCode::InputError, "cannot write " + json_path);
  j << summary.aggregate.dump(2) << "\n";
}

}  // namespace dexgrasp
