#pragma once

#include <sstream>

#include "dexgrasp/cloud.hpp"
#include "dexgrasp/contact.hpp"
#include "dexgrasp/core.hpp"
#include "dexgrasp/hand.hpp"

#include <nlohmann/json.hpp>

namespace dexgrasp {

struct EnergyWeights {
  double cont_fun = 60;   // functional fingers toward functional contacts
  double cont_unf = 30;   // remaining hand toward the contact region
  double cmap_hand = 50;  // contact region toward the hand
  double pen = 20;        // object penetration
  double spen = 1;        // self penetration
  double fc = 1;          // force closure
  double pip = 1;         // joint limits
};

struct OptimizerConfig {
  int iterations = 600;
  double learning_rate = 0.005;
  double decay = 0.98;
  int decay_every = 10;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double contact_sigma = 0.02;
};

using ParamVector = Eigen::Matrix<double, 22, 1>;  // 3 translation, 3 rotation, 16 joints

struct EnergyBreakdown {
  double cont_fun = 0, cont_unf = 0, cmap_hand = 0, pen = 0, spen = 0, fc = 0, pip = 0;
  double total = 0;
  ParamVector gradient = ParamVector::Zero();
};

namespace detail {

// Closest-point parameters (s, t) between segments p0p1 and q0q1.
inline std::pair<double, double> segment_closest_params(const Vec3& p0, const Vec3& p1,
                                                        const Vec3& q0, const Vec3& q1) {
  Vec3 d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
  double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  double s = 0, t = 0;
  if (a <= 1e-18 && e <= 1e-18) return {0, 0};
  if (a <= 1e-18) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    double c = d1.dot(r);
    if (e <= 1e-18) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      double b = d1.dot(d2);
      double denom = a * e - b * b;
      if (denom > 1e-18) s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
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
  return {s, t};
}

struct NearestObjectInfo {
  size_t index;
  double distance;
  Vec3 point;
  Vec3 normal;
};

}  // namespace detail

// Precomputed per-pose quantities shared by the energy terms.
struct EnergyContext {
  HandSurface surface;
  std::vector<Eigen::Matrix<double, 3, 22>> jacobian;
  ContactProbabilityMap c_map;
  std::vector<detail::NearestObjectInfo> nearest;  // per hand vertex
  double sigma = 0.02;
};

inline EnergyContext make_energy_context(const HandKinematics& kin, const GraspPose& pose,
                                         const OrientedPointCloud& object, const SpatialHash& hash,
                                         double sigma = 0.02) {
  EnergyContext ctx;
  ctx.sigma = sigma;
  ctx.surface = kin.forward_kinematics(pose);
  ctx.jacobian = kin.fk_jacobian(pose, ctx.surface);
  ctx.nearest.reserve(ctx.surface.size());
  ctx.c_map.resize(ctx.surface.size());
  for (size_t j = 0; j < ctx.surface.size(); ++j) {
    auto [idx, d] = hash.nearest(ctx.surface.vertices[j]);
    ctx.nearest.push_back({idx, d, object.points[idx], object.normals[idx]});
    // Contact probability from the projected signed distance, saturated at 1
    // inside the object; a decaying C inside would reward tunneling deeper.
    double depth = (object.points[idx] - ctx.surface.vertices[j]).dot(object.normals[idx]);
    if (ctx.surface.palm_back[j])
      ctx.c_map[j] = 0;
    else if (depth >= 0)
      ctx.c_map[j] = 1.0;
    else
      ctx.c_map[j] = std::exp(-depth * depth / (2 * sigma * sigma));
  }
  return ctx;
}

// C-weighted mean nearest-target distance over the selected hand vertices.
// The gradient carries both the distance term and the pose-dependence of C.
inline std::pair<double, ParamVector> e_cont_term(const EnergyContext& ctx,
                                                  const std::vector<Vec3>& targets,
                                                  bool functional_vertices) {
  if (targets.empty()) throw Error(ErrorCode::EmptyContactTarget, "no contact targets");
  double value = 0;
  ParamVector grad = ParamVector::Zero();
  size_t count = 0;
  for (size_t j = 0; j < ctx.surface.size(); ++j)
    if (bool(ctx.surface.functional[j]) == functional_vertices) ++count;
  if (count == 0) return {0.0, grad};

  double inv_sigma2 = 1.0 / (ctx.sigma * ctx.sigma);
  SpatialHash target_hash(targets);
  for (size_t j = 0; j < ctx.surface.size(); ++j) {
    if (bool(ctx.surface.functional[j]) != functional_vertices) continue;
    const Vec3& v = ctx.surface.vertices[j];
    auto [best_i, best] = target_hash.nearest(v);
    Vec3 best_target = targets[best_i];
    double c = ctx.c_map[j];
    value += c * best;
    if (ctx.surface.palm_back[j]) continue;  // C pinned to zero
    Vec3 g = Vec3::Zero();
    if (best > 1e-12) g += c * (v - best_target) / best;
    // dC/dv, nonzero only outside the object where C decays with the
    // projected distance depth = (p* - v).n*  (so d depth/dv = -n*)
    double depth = (ctx.nearest[j].point - v).dot(ctx.nearest[j].normal);
    if (depth < 0) g += best * (c * inv_sigma2) * depth * ctx.nearest[j].normal;
    grad += ctx.jacobian[j].transpose() * g;
  }
  value /= double(count);
  grad /= double(count);
  return {value, grad};
}

inline std::pair<double, ParamVector> e_cont_fun(const EnergyContext& ctx,
                                                 const std::vector<Vec3>& functional_targets) {
  return e_cont_term(ctx, functional_targets, true);
}

inline std::pair<double, ParamVector> e_cont_unf(const EnergyContext& ctx,
                                                 const std::vector<Vec3>& hand_targets) {
  return e_cont_term(ctx, hand_targets, false);
}

// Mean over contact-region points of distance to the nearest hand vertex.
inline std::pair<double, ParamVector> e_cmap_hand(const EnergyContext& ctx,
                                                  const std::vector<Vec3>& region) {
  if (region.empty()) throw Error(ErrorCode::EmptyContactTarget, "empty contact region");
  double value = 0;
  ParamVector grad = ParamVector::Zero();
  SpatialHash vertex_hash(ctx.surface.vertices);
  for (const auto& p : region) {
    auto [best_j, best] = vertex_hash.nearest(p);
    value += best;
    if (best > 1e-12)
      grad += ctx.jacobian[best_j].transpose() *
              Vec3((ctx.surface.vertices[best_j] - p) / best);
  }
  value /= double(region.size());
  grad /= double(region.size());
  return {value, grad};
}

// Sum of squared positive penetration depths over hand vertices.
inline std::pair<double, ParamVector> e_pen(const EnergyContext& ctx) {
  double value = 0;
  ParamVector grad = ParamVector::Zero();
  for (size_t j = 0; j < ctx.surface.size(); ++j) {
    const auto& nb = ctx.nearest[j];
    double depth = (nb.point - ctx.surface.vertices[j]).dot(nb.normal);
    if (depth <= 0) continue;
    value += depth * depth;
    grad += ctx.jacobian[j].transpose() * Vec3(2 * depth * -nb.normal);
  }
  return {value, grad};
}

// Squared capsule overlap over non-adjacent link pairs.
inline std::pair<double, ParamVector> e_spen(const HandKinematics& kin, const EnergyContext& ctx) {
  auto caps = kin.world_capsules(ctx.surface);
  // Jacobians of the capsule endpoints, via a synthetic surface.
  HandSurface endpoints;
  endpoints.link_r = ctx.surface.link_r;
  endpoints.link_t = ctx.surface.link_t;
  for (const auto& c : caps) {
    endpoints.vertices.push_back(c.p0);
    endpoints.vertices.push_back(c.p1);
    endpoints.link_id.push_back(c.link);
    endpoints.link_id.push_back(c.link);
  }
  // Root pose recovered from the palm link (identity offsets by construction).
  GraspPose pose;
  pose.rotation = Quat(ctx.surface.link_r[0]);
  pose.translation = ctx.surface.link_t[0];
  auto jac = kin.fk_jacobian(pose, endpoints);

  double value = 0;
  ParamVector grad = ParamVector::Zero();
  for (size_t a = 0; a < caps.size(); ++a)
    for (size_t b = a + 1; b < caps.size(); ++b) {
      if (kin.adjacent(caps[a].link, caps[b].link)) continue;
      auto [s, t] = detail::segment_closest_params(caps[a].p0, caps[a].p1, caps[b].p0, caps[b].p1);
      Vec3 ca = caps[a].p0 + s * (caps[a].p1 - caps[a].p0);
      Vec3 cb = caps[b].p0 + t * (caps[b].p1 - caps[b].p0);
      double dist = (ca - cb).norm();
      double overlap = caps[a].radius + caps[b].radius - dist;
      if (overlap <= 0 || dist < 1e-12) continue;
      value += overlap * overlap;
      Vec3 u = (ca - cb) / dist;
      Vec3 coeff = 2 * overlap * u;  // d(overlap^2)/d(ca) = -2*overlap*u ... sign below
      grad -= (jac[2 * a].transpose() * Vec3((1 - s) * coeff) +
               jac[2 * a + 1].transpose() * Vec3(s * coeff)) -
              (jac[2 * b].transpose() * Vec3((1 - t) * coeff) +
               jac[2 * b + 1].transpose() * Vec3(t * coeff));
    }
  return {value, grad};
}

// Residual net normal over touching vertices; piecewise constant in the
// pose, so its subgradient is zero.
inline std::pair<double, ParamVector> e_fc(const EnergyContext& ctx, double c_threshold = 0.5,
                                           double depth_window = 0.005) {
  Vec3 sum = Vec3::Zero();
  size_t count = 0;
  for (size_t j = 0; j < ctx.surface.size(); ++j) {
    if (ctx.c_map[j] < c_threshold) continue;
    const auto& nb = ctx.nearest[j];
    double depth = (nb.point - ctx.surface.vertices[j]).dot(nb.normal);
    if (std::abs(depth) > depth_window) continue;
    double nn = nb.normal.norm();
    if (nn < 1e-12) continue;
    sum += -nb.normal / nn;  // inward object normal
    ++count;
  }
  double value = count == 0 ? 1.0 : sum.norm() / double(count);
  return {value, ParamVector::Zero()};
}

// Squared hinge outside joint limits.
inline std::pair<double, ParamVector> e_pip(const HandKinematics& kin,
                                            const Eigen::Matrix<double, 16, 1>& theta) {
  double value = 0;
  ParamVector grad = ParamVector::Zero();
  for (int i = 0; i < 16; ++i) {
    double over = theta(i) - kin.joints[i].hi;
    double under = kin.joints[i].lo - theta(i);
    if (over > 0) {
      value += over * over;
      grad(6 + i) += 2 * over;
    }
    if (under > 0) {
      value += under * under;
      grad(6 + i) -= 2 * under;
    }
  }
  return {value, grad};
}

// Resolves contact-set indices to target point lists.
struct ContactTargets {
  std::vector<Vec3> functional;
  std::vector<Vec3> hand;
};

inline ContactTargets resolve_contact_targets(const ContactSet& contacts,
                                              const OrientedPointCloud& object) {
  ContactTargets t;
  auto gather = [&](const std::vector<size_t>& idx, std::vector<Vec3>& out) {
    for (size_t i : idx) {
      if (i >= object.size()) throw Error(ErrorCode::InputError, "contact index out of range");
      out.push_back(object.points[i]);
    }
  };
  if (!contacts.m_func.empty()) {
    gather(contacts.m_func, t.functional);
  } else {
    gather(contacts.p_thumb, t.functional);
    gather(contacts.p_index, t.functional);
  }
  gather(contacts.m_hand, t.hand);
  if (t.functional.empty() || t.hand.empty())
    throw Error(ErrorCode::EmptyContactTarget, "contact set resolves to no target points");
  return t;
}

inline EnergyBreakdown total_energy(const HandKinematics& kin, const GraspPose& pose,
                                    const ContactTargets& targets,
                                    const OrientedPointCloud& object, const SpatialHash& hash,
                                    const EnergyWeights& w = {}, double sigma = 0.02) {
  auto ctx = make_energy_context(kin, pose, object, hash, sigma);
  EnergyBreakdown e;
  auto [v1, g1] = e_cont_fun(ctx, targets.functional);
  auto [v2, g2] = e_cont_unf(ctx, targets.hand);
  auto [v3, g3] = e_cmap_hand(ctx, targets.hand);
  auto [v4, g4] = e_pen(ctx);
  auto [v5, g5] = e_spen(kin, ctx);
  auto [v6, g6] = e_fc(ctx);
  auto [v7, g7] = e_pip(kin, pose.theta);
  e.cont_fun = v1;
  e.cont_unf = v2;
  e.cmap_hand = v3;
  e.pen = v4;
  e.spen = v5;
  e.fc = v6;
  e.pip = v7;
  e.total = w.cont_fun * v1 + w.cont_unf * v2 + w.cmap_hand * v3 + w.pen * v4 + w.spen * v5 +
            w.fc * v6 + w.pip * v7;
  e.gradient = w.cont_fun * g1 + w.cont_unf * g2 + w.cmap_hand * g3 + w.pen * g4 + w.spen * g5 +
               w.fc * g6 + w.pip * g7;
  return e;
}

inline EnergyBreakdown total_energy(const HandKinematics& kin, const GraspPose& pose,
                                    const ContactSet& contacts, const OrientedPointCloud& object,
                                    const EnergyWeights& w = {}, double sigma = 0.02) {
  SpatialHash hash(object.points);
  return total_energy(kin, pose, resolve_contact_targets(contacts, object), object, hash, w,
                      sigma);
}

// ---------------------------------------------------------------------------
// Adam descent

struct IterationRecord {
  int iteration;  // 1-based
  double lr;
  EnergyBreakdown energy;
};

inline std::string trace_to_jsonl(const std::vector<IterationRecord>& trace) {
  std::ostringstream out;
  for (const auto& r : trace) {
    nlohmann::json j = {{"iteration", r.iteration},
                        {"lr", r.lr},
                        {"cont_fun", r.energy.cont_fun},
                        {"cont_unf", r.energy.cont_unf},
                        {"cmap_hand", r.energy.cmap_hand},
                        {"pen", r.energy.pen},
                        {"spen", r.energy.spen},
                        {"fc", r.energy.fc},
                        {"pip", r.energy.pip},
                        {"total", r.energy.total}};
    out << j.dump() << "\n";
  }
  return out.str();
}

struct OptimizeResult {
  GraspPose pose;
  EnergyBreakdown energy;  // at the returned pose
  std::vector<IterationRecord> trace;
};

// Adam over 22 parameters; the rotation is re-composed from an
// exponential-map increment each step and theta is clamped to limits.
// Returns the best-total iterate. `trace_out`, when given, receives the
// per-iteration records even if the run aborts on non-finite energy.
inline OptimizeResult optimize(const HandKinematics& kin, const GraspPose& initial,
                               const ContactSet& contacts, const OrientedPointCloud& object,
                               const EnergyWeights& weights = {}, const OptimizerConfig& cfg = {},
                               std::vector<IterationRecord>* trace_out = nullptr) {
  if (!initial.finite()) throw Error(ErrorCode::InvalidPose, "non-finite initial pose");
  if (cfg.iterations < 1 || cfg.learning_rate <= 0)
    throw Error(ErrorCode::ConfigError, "iterations >= 1 and lr > 0 required");

  SpatialHash hash(object.points);
  auto targets = resolve_contact_targets(contacts, object);

  OptimizeResult result;
  GraspPose pose = initial;
  pose.rotation.normalize();
  pose.theta = kin.clamp_to_limits(pose.theta);
  result.pose = pose;
  result.energy = total_energy(kin, pose, targets, object, hash, weights, cfg.contact_sigma);
  double best_total = result.energy.total;

  ParamVector m = ParamVector::Zero(), v = ParamVector::Zero();
  std::vector<IterationRecord> local_trace;
  auto& trace = trace_out ? *trace_out : local_trace;

  for (int it = 1; it <= cfg.iterations; ++it) {
    double lr = cfg.learning_rate * std::pow(cfg.decay, it / cfg.decay_every);
    auto eb = total_energy(kin, pose, targets, object, hash, weights, cfg.contact_sigma);
    if (!std::isfinite(eb.total) || !eb.gradient.allFinite()) {
      result.trace = trace;
      throw Error(ErrorCode::OptimizationDiverged,
                  "non-finite energy at iteration " + std::to_string(it));
    }
    trace.push_back({it, lr, eb});
    if (eb.total < best_total) {
      best_total = eb.total;
      result.pose = pose;
      result.energy = eb;
    }

    m = cfg.beta1 * m + (1 - cfg.beta1) * eb.gradient;
    v = cfg.beta2 * v + (1 - cfg.beta2) * eb.gradient.cwiseProduct(eb.gradient);
    double bc1 = 1 - std::pow(cfg.beta1, it);
    double bc2 = 1 - std::pow(cfg.beta2, it);
    ParamVector step;
    for (int k = 0; k < 22; ++k)
      step(k) = lr * (m(k) / bc1) / (std::sqrt(v(k) / bc2) + cfg.epsilon);

    pose.translation -= step.head<3>();
    pose.rotation = Quat(exp_so3(Vec3(-step.segment<3>(3))) * pose.rotation.toRotationMatrix());
    pose.rotation.normalize();
    pose.theta = kin.clamp_to_limits(pose.theta - step.tail<16>());
  }

  // the pose produced by the final update may beat every recorded one
  auto eb = total_energy(kin, pose, targets, object, hash, weights, cfg.contact_sigma);
  if (std::isfinite(eb.total) && eb.total < best_total) {
    result.pose = pose;
    result.energy = eb;
  }
  result.trace = trace;
  return result;
}

}  // namespace dexgrasp
