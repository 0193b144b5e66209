#pragma once

#include <filesystem>

#include "dexgrasp/camera.hpp"
#include "dexgrasp/contact.hpp"
#include "dexgrasp/eval.hpp"
#include "dexgrasp/hull.hpp"
#include "dexgrasp/reasoner.hpp"
#include "dexgrasp/refine.hpp"
#include "dexgrasp/verification.hpp"

namespace dexgrasp {

// ---------------------------------------------------------------------------
// Task and configuration

struct CameraSpec {
  bool auto_frame = true;
  Vec3 eye = Vec3(0, 0, 0.5);
  Vec3 target = Vec3::Zero();
  Vec3 up = Vec3(0, 1, 0);
};

struct TaskSpec {
  std::string name;
  std::string mesh_path;
  std::string instruction;
  std::string annotation_dir;  // optional
  std::string feature_file;    // optional
  std::set<int> gt_parts;      // optional
  bool twist = false;
  CameraSpec camera;
};

struct PipelineConfig {
  std::string backend = "heuristic";           // fixture | heuristic | http
  std::string fixture_path;                    // script for the fixture backend
  HttpBackendConfig http;
  uint64_t seed = 0;
  size_t surface_points = 4096;
  int hand_points_per_link = 40;
  double hull_offset = 0.10;
  int rotation_candidates = 4;
  size_t contour_points = 20;
  VerificationConfig verification;
  ContactInferenceConfig contact;
  EnergyWeights weights;
  OptimizerConfig optimizer;
  bool force_point_level = false;
  bool skip_point_level = false;
};

namespace detail {

inline double get_number(const nlohmann::json& j, const char* key, double fallback) {
  if (!j.contains(key)) return fallback;
  if (!j[key].is_number()) throw Error(ErrorCode::ConfigError, std::string(key) + ": not a number");
  return j[key].get<double>();
}

inline Vec3 get_vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3)
    throw Error(ErrorCode::ConfigError, "expected a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace detail

inline PipelineConfig parse_config(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "backend",        "fixture_path",    "http",          "seed",
      "surface_points", "hand_points_per_link", "hull_offset", "rotation_candidates",
      "contour_points",
      "tau_n",          "tau_m",           "neighbor_radius",
      "depth_tolerance", "near_radius",    "kmeans_k",      "knn_k",  "sphere_radius",
      "weights",        "optimizer",       "force_point_level", "skip_point_level"};
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, "config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw Error(ErrorCode::ConfigError, "unknown config key: " + key);

  PipelineConfig c;
  if (j.contains("backend")) {
    c.backend = j["backend"].get<std::string>();
    if (c.backend != "fixture" && c.backend != "heuristic" && c.backend != "http")
      throw Error(ErrorCode::ConfigError, "backend must be fixture, heuristic, or http");
  }
  if (j.contains("fixture_path")) c.fixture_path = j["fixture_path"].get<std::string>();
  if (j.contains("http")) {
    const auto& h = j["http"];
    if (h.contains("url")) c.http.url = h["url"].get<std::string>();
    if (h.contains("model")) c.http.model = h["model"].get<std::string>();
    if (h.contains("timeout_seconds")) c.http.timeout_seconds = h["timeout_seconds"].get<int>();
  }
  c.seed = uint64_t(detail::get_number(j, "seed", 0));
  c.surface_points = size_t(detail::get_number(j, "surface_points", 4096));
  c.hand_points_per_link = int(detail::get_number(j, "hand_points_per_link", 40));
  c.hull_offset = detail::get_number(j, "hull_offset", 0.10);
  c.rotation_candidates = int(detail::get_number(j, "rotation_candidates", 4));
  c.contour_points = size_t(detail::get_number(j, "contour_points", 20));
  c.verification.tau_n = detail::get_number(j, "tau_n", 0.85);
  c.verification.tau_m = detail::get_number(j, "tau_m", 0.7);
  c.verification.neighbor_radius = detail::get_number(j, "neighbor_radius", 0.015);
  c.contact.depth_tolerance = detail::get_number(j, "depth_tolerance", 0.005);
  c.contact.near_radius = detail::get_number(j, "near_radius", 0.02);
  c.contact.kmeans_k = int(detail::get_number(j, "kmeans_k", 8));
  c.contact.knn_k = int(detail::get_number(j, "knn_k", 5));
  c.contact.sphere_radius = detail::get_number(j, "sphere_radius", 0.015);
  if (c.verification.tau_n <= 0 || c.verification.tau_n >= 1 || c.verification.tau_m <= 0 ||
      c.verification.tau_m >= 1)
    throw Error(ErrorCode::ConfigError, "tau thresholds must lie in (0,1)");
  if (c.rotation_candidates < 1 || c.surface_points < 16 || c.hand_points_per_link < 8)
    throw Error(ErrorCode::ConfigError,
                "rotation_candidates >= 1, surface_points >= 16, hand_points_per_link >= 8");
  if (j.contains("weights")) {
    const auto& w = j["weights"];
    c.weights.cont_fun = detail::get_number(w, "cont_fun", 60);
    c.weights.cont_unf = detail::get_number(w, "cont_unf", 30);
    c.weights.cmap_hand = detail::get_number(w, "cmap_hand", 50);
    c.weights.pen = detail::get_number(w, "pen", 20);
    c.weights.spen = detail::get_number(w, "spen", 1);
    c.weights.fc = detail::get_number(w, "fc", 1);
    c.weights.pip = detail::get_number(w, "pip", 1);
  }
  if (j.contains("optimizer")) {
    const auto& o = j["optimizer"];
    c.optimizer.iterations = int(detail::get_number(o, "iterations", 600));
    c.optimizer.learning_rate = detail::get_number(o, "learning_rate", 0.005);
    c.optimizer.decay = detail::get_number(o, "decay", 0.98);
    c.optimizer.decay_every = int(detail::get_number(o, "decay_every", 10));
    if (c.optimizer.iterations < 1 || c.optimizer.learning_rate <= 0)
      throw Error(ErrorCode::ConfigError, "optimizer: iterations >= 1 and learning_rate > 0");
  }
  if (j.contains("force_point_level")) c.force_point_level = j["force_point_level"].get<bool>();
  if (j.contains("skip_point_level")) c.skip_point_level = j["skip_point_level"].get<bool>();
  return c;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::InputError, "cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("config parse: ") + e.what());
  }
  return parse_config(j);
}

inline TaskSpec load_task(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::InputError, "cannot open task " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InputError, std::string("task parse: ") + e.what());
  }
  TaskSpec t;
  t.name = j.value("name", std::filesystem::path(path).stem().string());
  if (!j.contains("mesh") || !j.contains("instruction"))
    throw Error(ErrorCode::InputError, "task needs mesh and instruction");
  t.mesh_path = j["mesh"].get<std::string>();
  t.instruction = j["instruction"].get<std::string>();
  if (t.instruction.empty()) throw Error(ErrorCode::InputError, "empty instruction");
  if (!std::filesystem::exists(t.mesh_path))
    throw Error(ErrorCode::InputError, "mesh not found: " + t.mesh_path);
  t.annotation_dir = j.value("annotation_dir", std::string());
  t.feature_file = j.value("feature_file", std::string());
  if (j.contains("gt_parts"))
    for (const auto& id : j["gt_parts"]) t.gt_parts.insert(id.get<int>());
  t.twist = j.value("twist", false);
  if (j.contains("camera") && j["camera"].is_object()) {
    t.camera.auto_frame = false;
    t.camera.eye = detail::get_vec3(j["camera"].at("eye"));
    t.camera.target = detail::get_vec3(j["camera"].at("target"));
    if (j["camera"].contains("up")) t.camera.up = detail::get_vec3(j["camera"]["up"]);
  }
  return t;
}

// External per-point feature file: <path> holds the float32 blob,
// <path>.json the {point_count, feature_width} header.
inline std::vector<std::vector<float>> load_features(const std::string& path,
                                                     size_t expected_points) {
  std::ifstream hf(path + ".json");
  if (!hf) throw Error(ErrorCode::InputError, "cannot open feature header " + path + ".json");
  auto header = nlohmann::json::parse(hf);
  size_t count = header.at("point_count").get<size_t>();
  size_t width = header.at("feature_width").get<size_t>();
  if (count != expected_points)
    throw Error(ErrorCode::InputError, "feature file point count mismatch");
  std::ifstream bf(path, std::ios::binary);
  if (!bf) throw Error(ErrorCode::InputError, "cannot open feature blob " + path);
  std::vector<std::vector<float>> features(count, std::vector<float>(width));
  for (auto& row : features)
    bf.read(reinterpret_cast<char*>(row.data()), std::streamsize(width * sizeof(float)));
  if (!bf) throw Error(ErrorCode::InputError, "feature blob truncated");
  return features;
}

// ---------------------------------------------------------------------------
// Hand mesh for rendering, export, and volume metrics: palm box plus one
// cylinder per capsule link.

inline TriMesh hand_mesh(const HandKinematics& kin, const HandSurface& surface,
                         int segments = 12) {
  TriMesh out;
  auto append = [&](const TriMesh& part) {
    int base = int(out.vertices.size());
    out.vertices.insert(out.vertices.end(), part.vertices.begin(), part.vertices.end());
    for (const auto& f : part.faces) out.faces.push_back({f[0] + base, f[1] + base, f[2] + base});
  };
  for (size_t i = 0; i < kin.links.size(); ++i) {
    const auto& link = kin.links[i];
    TriMesh part;
    if (link.is_palm) {
      part = make_box(Vec3(0.045, 0.04, 0.0125));
    } else {
      const auto& c = link.capsule;
      double len = (c.p1 - c.p0).norm();
      if (len < 1e-9) continue;
      part = make_cylinder(c.radius, len, segments);
      // cylinder axis is +y about its center; move onto the capsule segment
      Mat3 r = rotation_between(Vec3(0, 1, 0), (c.p1 - c.p0) / len);
      Vec3 mid = (c.p0 + c.p1) / 2;
      for (auto& v : part.vertices) v = r * v + mid;
    }
    for (auto& v : part.vertices) v = surface.link_r[i] * v + surface.link_t[i];
    append(part);
  }
  out.compute_normals();
  return out;
}

// ---------------------------------------------------------------------------
// Result record

struct GraspResult {
  std::string task;
  GraspPose initial;
  GraspPose final;
  ContactSet contacts;
  EnergyBreakdown energy;  // at the final pose
  MetricReport metrics;
  std::string transcript_path;
};

namespace detail {

inline nlohmann::json pose_to_json(const GraspPose& p) {
  return {{"translation", {p.translation.x(), p.translation.y(), p.translation.z()}},
          {"rotation", {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()}},
          {"theta", std::vector<double>(p.theta.data(), p.theta.data() + 16)}};
}

inline GraspPose pose_from_json(const nlohmann::json& j) {
  GraspPose p;
  p.translation = Vec3(j.at("translation")[0], j.at("translation")[1], j.at("translation")[2]);
  const auto& q = j.at("rotation");
  p.rotation = Quat(q[0].get<double>(), q[1].get<double>(), q[2].get<double>(),
                    q[3].get<double>());
  const auto& t = j.at("theta");
  for (int i = 0; i < 16; ++i) p.theta(i) = t[i].get<double>();
  return p;
}

}  // namespace detail

inline nlohmann::json result_to_json(const GraspResult& r) {
  nlohmann::json energy = {{"cont_fun", r.energy.cont_fun}, {"cont_unf", r.energy.cont_unf},
                           {"cmap_hand", r.energy.cmap_hand}, {"pen", r.energy.pen},
                           {"spen", r.energy.spen},          {"fc", r.energy.fc},
                           {"pip", r.energy.pip},            {"total", r.energy.total}};
  nlohmann::json metrics = {{"p_vol_cm3", r.metrics.p_vol_cm3}, {"p_dep_cm", r.metrics.p_dep_cm},
                            {"sim_dis_cm", r.metrics.sim_dis_cm}, {"sim_suc", r.metrics.sim_suc},
                            {"part_acc", r.metrics.part_acc},  {"sc_ratio", r.metrics.sc_ratio},
                            {"twist", r.metrics.twist}};
  return {{"task", r.task},
          {"initial", detail::pose_to_json(r.initial)},
          {"final", detail::pose_to_json(r.final)},
          {"contacts",
           {{"m_hand", r.contacts.m_hand},
            {"m_func", r.contacts.m_func},
            {"p_thumb", r.contacts.p_thumb},
            {"p_index", r.contacts.p_index},
            {"provenance", r.contacts.provenance}}},
          {"energy", energy},
          {"metrics", metrics},
          {"transcript", r.transcript_path}};
}

inline GraspResult result_from_json(const nlohmann::json& j) {
  GraspResult r;
  r.task = j.at("task").get<std::string>();
  r.initial = detail::pose_from_json(j.at("initial"));
  r.final = detail::pose_from_json(j.at("final"));
  const auto& c = j.at("contacts");
  r.contacts.m_hand = c.at("m_hand").get<std::vector<size_t>>();
  r.contacts.m_func = c.at("m_func").get<std::vector<size_t>>();
  r.contacts.p_thumb = c.at("p_thumb").get<std::vector<size_t>>();
  r.contacts.p_index = c.at("p_index").get<std::vector<size_t>>();
  r.contacts.provenance = c.at("provenance");
  const auto& e = j.at("energy");
  r.energy.cont_fun = e.at("cont_fun");
  r.energy.cont_unf = e.at("cont_unf");
  r.energy.cmap_hand = e.at("cmap_hand");
  r.energy.pen = e.at("pen");
  r.energy.spen = e.at("spen");
  r.energy.fc = e.at("fc");
  r.energy.pip = e.at("pip");
  r.energy.total = e.at("total");
  const auto& m = j.at("metrics");
  r.metrics.p_vol_cm3 = m.at("p_vol_cm3");
  r.metrics.p_dep_cm = m.at("p_dep_cm");
  r.metrics.sim_dis_cm = m.at("sim_dis_cm");
  r.metrics.sim_suc = m.at("sim_suc");
  r.metrics.part_acc = m.at("part_acc");
  r.metrics.sc_ratio = m.at("sc_ratio");
  r.metrics.twist = m.at("twist");
  r.transcript_path = j.at("transcript").get<std::string>();
  return r;
}

// ---------------------------------------------------------------------------
// Scene preparation shared by the pipeline stages

struct PipelineScene {
  TriMesh mesh;
  OrientedPointCloud cloud;
  PinholeCamera camera;
  RenderResult render_result;
  PartAnnotation annotation;
};

inline PipelineScene prepare_scene(const TaskSpec& task, const PipelineConfig& cfg) {
  PipelineScene s;
  s.mesh = load_mesh(task.mesh_path);
  s.cloud = sample_surface(s.mesh, cfg.surface_points, cfg.seed);
  if (!task.feature_file.empty())
    s.cloud.features = load_features(task.feature_file, s.cloud.size());
  s.camera = task.camera.auto_frame
                 ? auto_frame(s.mesh)
                 : look_at(task.camera.eye, task.camera.target, task.camera.up);
  s.render_result = render({{&s.mesh, Color{200, 180, 150}}}, s.camera);
  if (!task.annotation_dir.empty()) {
    s.annotation = load_annotation(task.annotation_dir);
  } else {
    // no part annotation: the whole silhouette is one region
    s.annotation.regions.push_back({1, "object", silhouette(s.render_result.depth)});
  }
  return s;
}

inline std::shared_ptr<ReasonerBackend> make_backend(const PipelineConfig& cfg) {
  if (cfg.backend == "heuristic") return std::make_shared<HeuristicBackend>(cfg.seed);
  if (cfg.backend == "fixture") {
    if (cfg.fixture_path.empty())
      throw Error(ErrorCode::ConfigError, "fixture backend needs fixture_path");
    std::ifstream f(cfg.fixture_path);
    if (!f) throw Error(ErrorCode::InputError, "cannot open fixture " + cfg.fixture_path);
    auto j = nlohmann::json::parse(f);
    // a stage-keyed script, or a persisted transcript to replay
    if (j.is_array()) return std::make_shared<FixtureBackend>(FixtureBackend::from_transcript(j));
    return std::make_shared<FixtureBackend>(j);
  }
  if (cfg.backend == "http") {
    if (cfg.http.url.empty()) throw Error(ErrorCode::ConfigError, "http backend needs a url");
    return std::make_shared<HttpBackend>(cfg.http);
  }
  throw Error(ErrorCode::ConfigError, "unknown backend " + cfg.backend);
}

// ---------------------------------------------------------------------------
// Stage 1: contact inference

inline ContactSet infer_contacts(const PipelineScene& scene, const TaskSpec& task,
                                 const PipelineConfig& cfg, ReasonerSession& session) {
  std::vector<PartInfo> parts;
  for (const auto& r : scene.annotation.regions) parts.push_back({r.id, r.name, r.mask.count()});
  auto selection = select_contact_parts(session, parts, task.instruction);

  ContactInferenceConfig ccfg = cfg.contact;
  ccfg.seed = cfg.seed;
  Mask2D hand_mask = merge_selected_parts(scene.annotation, selection.hand_ids);

  ContactSet contacts;
  contacts.m_hand = lift_mask_to_3d(hand_mask, scene.render_result.depth, scene.camera,
                                    scene.cloud, ccfg);
  contacts.m_func = contacts.m_hand;  // functional mask assumed equal to the hand mask
  contacts.provenance = {{"hand_ids", selection.hand_ids},
                         {"functional_ids", selection.functional_ids},
                         {"point_level", false}};

  bool different_parts = false;
  if (selection.functional_ids.size() >= 2) {
    auto name_of = [&](int id) {
      for (const auto& p : parts)
        if (p.id == id) return p.name;
      return std::string();
    };
    int a = selection.functional_ids.front(), b = selection.functional_ids.back();
    different_parts = should_infer_points({a, name_of(a)}, {b, name_of(b)}, false);
  }
  bool want_points = cfg.force_point_level || (different_parts && !cfg.skip_point_level);
  if (cfg.skip_point_level && !cfg.force_point_level) want_points = false;
  if (!want_points) return contacts;

  auto pixels = sample_mask_contour(hand_mask, int(cfg.contour_points));
  SpatialHash hash(scene.cloud.points);
  std::vector<PointCandidate> candidates;
  for (size_t i = 0; i < pixels.size(); ++i) {
    double z = scene.render_result.depth.at(pixels[i].x(), pixels[i].y());
    if (z <= 0) continue;
    Vec3 p = scene.camera.back_project_pixel(pixels[i].x() + 0.5, pixels[i].y() + 0.5, z);
    auto near = hash.radius_query(p, cfg.verification.neighbor_radius);
    std::vector<Vec3> normals;
    for (size_t idx : near) normals.push_back(scene.cloud.normals[idx]);
    if (normals.empty()) normals.push_back(Vec3(0, 0, 1));
    candidates.push_back({int(i) + 1, pixels[i], p, normals});
  }
  if (candidates.size() < 2) return contacts;

  for (int attempt = 0; attempt < 2; ++attempt) {
    auto [thumb_id, index_id] =
        select_contact_points(session, candidates, task.instruction, cfg.verification.tau_m);
    const PointCandidate *thumb = nullptr, *index = nullptr;
    for (const auto& c : candidates) {
      if (c.id == thumb_id) thumb = &c;
      if (c.id == index_id) index = &c;
    }
    if (!validate_point_contacts(thumb->point, index->point, thumb->neighbor_normals,
                                 index->neighbor_normals, cfg.verification.tau_m))
      continue;  // re-ask once; the force axis violated the surface normals
    contacts.p_thumb = expand_point_contact(thumb->pixel, scene.render_result.depth, scene.camera,
                                            scene.cloud, cfg.contact.sphere_radius);
    contacts.p_index = expand_point_contact(index->pixel, scene.render_result.depth, scene.camera,
                                            scene.cloud, cfg.contact.sphere_radius);
    contacts.provenance["point_level"] = true;
    contacts.provenance["thumb_point"] = thumb_id;
    contacts.provenance["index_point"] = index_id;
    break;
  }
  return contacts;
}

// ---------------------------------------------------------------------------
// Stages 2-3: placement, grasp type, rotation

struct PlacementResult {
  Vec3 region_center;
  std::string direction_label;
  Direction3 approach;
  Direction3 palm_direction;
  Vec3 position;
  GraspType grasp_type;
  Quat rotation;
};

inline Vec3 region_mean_normal(const OrientedPointCloud& cloud, const std::vector<size_t>& idx) {
  Vec3 sum = Vec3::Zero();
  for (size_t i : idx) sum += cloud.normals[i];
  if (sum.norm() < 1e-9) return Vec3(0, 1, 0);
  return sum.normalized();
}

inline PlacementResult plan_placement(const PipelineScene& scene, const TaskSpec& task,
                                      const PipelineConfig& cfg, const ContactSet& contacts,
                                      const HandKinematics& kin, ReasonerSession& session) {
  PlacementResult out;
  Vec3 center = Vec3::Zero();
  for (size_t i : contacts.m_hand) center += scene.cloud.points[i];
  center /= double(std::max<size_t>(1, contacts.m_hand.size()));
  out.region_center = center;

  auto directions = build_direction_set(scene.camera, center);
  auto [label, vec] = select_direction(session, directions, task.instruction,
                                       region_mean_normal(scene.cloud, contacts.m_hand));
  out.direction_label = label;
  out.approach = Direction3(vec);
  out.palm_direction = optimal_palm_direction(out.approach);

  auto hull = expand_hull(convex_hull(scene.mesh.vertices), cfg.hull_offset);
  out.position = initial_position(center, out.approach, hull);

  // functional-region extent drives the heuristic grasp-type rule
  Vec3 lo = center, hi = center;
  for (size_t i : contacts.m_func) {
    lo = lo.cwiseMin(scene.cloud.points[i]);
    hi = hi.cwiseMax(scene.cloud.points[i]);
  }
  double extent = (hi - lo).maxCoeff();
  out.grasp_type = select_grasp_type(session, default_grasp_types(), task.instruction, extent);

  // rotation candidates, geometric filtering, backend choice
  std::vector<Vec3> region_normals;
  for (size_t i : contacts.m_hand) region_normals.push_back(scene.cloud.normals[i]);
  Eigen::Matrix<double, 16, 1> theta0 = Eigen::Matrix<double, 16, 1>::Zero();

  int k = cfg.rotation_candidates;
  std::vector<GraspPose> cands;
  std::vector<size_t> survivors;
  for (int round = 0; round < 2; ++round) {
    cands = generate_rotation_candidates(theta0, out.position, out.palm_direction, k);
    std::vector<Vec3> finger_dirs;
    for (const auto& c : cands)
      finger_dirs.push_back(kin.palm_and_finger_directions(c).second.vec());
    survivors = filter_rotation_candidates(finger_dirs, region_normals, cfg.verification.tau_n);
    if (!survivors.empty()) break;
    k *= 2;  // none feasible: retry once with doubled K
  }
  if (survivors.empty())
    throw Error(ErrorCode::NoFeasibleRotation, "all rotation candidates filtered");

  std::vector<Vec3> func_points;
  for (size_t i : contacts.m_func) func_points.push_back(scene.cloud.points[i]);
  auto candidate_cost = [&](size_t idx) {
    auto s = kin.forward_kinematics(cands[idx]);
    double sum = 0;
    size_t n = 0;
    for (size_t j = 0; j < s.size(); ++j) {
      if (!s.functional[j]) continue;
      double best = std::numeric_limits<double>::max();
      for (const auto& p : func_points) best = std::min(best, (s.vertices[j] - p).norm());
      sum += best;
      ++n;
    }
    return n == 0 ? 0.0 : sum / double(n);
  };

  std::vector<RenderResult> with_object, hand_only;
  for (const auto& c : cands) {
    auto hm = hand_mesh(kin, kin.forward_kinematics(c));
    with_object.push_back(
        render({{&scene.mesh, Color{200, 180, 150}}, {&hm, Color{120, 160, 220}}}, scene.camera));
    hand_only.push_back(render({{&hm, Color{120, 160, 220}}}, scene.camera));
  }
  auto composite = compose_imagination(with_object, hand_only);
  int chosen = select_rotation(session, composite, survivors, candidate_cost);

  out.rotation = cands[chosen].rotation;
  return out;
}

// ---------------------------------------------------------------------------
// Metrics for a refined grasp

inline MetricReport compute_metrics(const HandKinematics& kin, const GraspPose& pose,
                                    const PipelineScene& scene, const TaskSpec& task) {
  MetricReport m;
  m.twist = task.twist;
  auto surface = kin.forward_kinematics(pose);
  auto hm = hand_mesh(kin, surface);
  auto [p_vol, p_dep] = penetration_metrics(surface, hm, scene.mesh, scene.cloud);
  m.p_vol_cm3 = p_vol;
  m.p_dep_cm = p_dep;
  if (!task.twist) {
    auto sim = simulate_displacement(surface.vertices, scene.cloud);
    m.sim_dis_cm = sim.sim_dis_cm;
    m.sim_suc = simulation_success(sim, m.p_dep_cm);
  }
  if (!task.gt_parts.empty() && scene.cloud.part_labels.size() == scene.cloud.size()) {
    m.part_acc = part_accuracy(surface, scene.cloud, task.gt_parts);
    m.sc_ratio = semantic_contact_ratio(surface, scene.cloud, task.gt_parts);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Commands

inline GraspResult run_plan(const TaskSpec& task, const PipelineConfig& cfg,
                            const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto scene = prepare_scene(task, cfg);
  if (!scene.cloud.part_labels.empty() && task.annotation_dir.empty())
    scene.cloud.part_labels.clear();
  // GT part labels for metrics: transfer from annotation masks when provided
  if (!task.gt_parts.empty() && scene.cloud.part_labels.size() != scene.cloud.size()) {
    scene.cloud.part_labels.assign(scene.cloud.size(), -1);
    for (const auto& region : scene.annotation.regions) {
      ContactInferenceConfig ccfg = cfg.contact;
      ccfg.seed = cfg.seed;
      try {
        for (size_t i : lift_mask_to_3d(region.mask, scene.render_result.depth, scene.camera,
                                        scene.cloud, ccfg))
          scene.cloud.part_labels[i] = region.id;
      } catch (const Error&) {
        // region not visible from this view: leave its points unlabeled
      }
    }
  }

  HandKinematics kin = make_default_hand(cfg.hand_points_per_link);
  ReasonerSession session(make_backend(cfg));

  auto contacts = infer_contacts(scene, task, cfg, session);
  auto placement = plan_placement(scene, task, cfg, contacts, kin, session);

  GraspResult result;
  result.task = task.name;
  result.contacts = contacts;
  result.initial.translation = placement.position;
  result.initial.rotation = placement.rotation;
  result.initial.theta = kin.clamp_to_limits(placement.grasp_type.theta);

  OptimizerConfig ocfg = cfg.optimizer;
  auto opt = optimize(kin, result.initial, contacts, scene.cloud, cfg.weights, ocfg);
  result.final = opt.pose;
  result.energy = opt.energy;
  result.metrics = compute_metrics(kin, result.final, scene, task);

  result.contacts.provenance["direction"] = placement.direction_label;
  result.contacts.provenance["grasp_type"] = placement.grasp_type.name;

  // artifacts; the result stores the transcript name relative to its own
  // directory so replays into another directory compare byte-identical
  result.transcript_path = task.name + ".transcript.json";
  {
    std::ofstream f(out_dir + "/" + result.transcript_path);
    f << transcript_to_json(session.transcript()).dump(2) << "\n";
  }
  {
    std::ofstream f(out_dir + "/" + task.name + ".result.json");
    f << result_to_json(result).dump(2) << "\n";
  }
  save_obj(hand_mesh(kin, kin.forward_kinematics(result.final)),
           out_dir + "/" + task.name + ".hand.obj");
  {
    std::ofstream f(out_dir + "/" + task.name + ".trace.jsonl");
    f << trace_to_jsonl(opt.trace);
  }
  return result;
}

// Refinement-only entry point. With `ablate_initial` the initializer is the
// documented ablation: contact-region center, random rotation, extended
// (zero) joints.
inline GraspResult run_refine(const TaskSpec& task, const PipelineConfig& cfg,
                              const GraspPose& initial, const ContactSet& contacts,
                              const std::string& out_dir, bool ablate_initial = false) {
  std::filesystem::create_directories(out_dir);
  auto scene = prepare_scene(task, cfg);
  HandKinematics kin = make_default_hand(cfg.hand_points_per_link);

  GraspPose start = initial;
  if (ablate_initial) {
    Rng rng(cfg.seed);
    Vec3 center = Vec3::Zero();
    for (size_t i : contacts.m_hand) center += scene.cloud.points[i];
    center /= double(std::max<size_t>(1, contacts.m_hand.size()));
    start.translation = center;
    start.rotation = Quat(Eigen::AngleAxisd(rng.uniform(0, 2 * M_PI), rng.unit_vector()));
    start.theta.setZero();
  }

  GraspResult result;
  result.task = task.name;
  result.contacts = contacts;
  result.initial = start;
  auto opt = optimize(kin, start, contacts, scene.cloud, cfg.weights, cfg.optimizer);
  result.final = opt.pose;
  result.energy = opt.energy;
  result.metrics = compute_metrics(kin, result.final, scene, task);
  {
    std::ofstream f(out_dir + "/" + task.name + ".result.json");
    f << result_to_json(result).dump(2) << "\n";
  }
  {
    std::ofstream f(out_dir + "/" + task.name + ".trace.jsonl");
    f << trace_to_jsonl(opt.trace);
  }
  return result;
}

// Aggregates every *.result.json under `results_dir`.
inline BatchSummary run_evaluate(const std::string& results_dir, const std::string& out_dir) {
  std::vector<TaskMetrics> tasks;
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(results_dir))
    if (entry.path().string().ends_with(".result.json")) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    std::ifstream f(path);
    auto r = result_from_json(nlohmann::json::parse(f));
    tasks.push_back({r.task, r.metrics});
  }
  auto summary = batch_evaluate(tasks);
  std::filesystem::create_directories(out_dir);
  save_batch(summary, out_dir + "/metrics.csv", out_dir + "/metrics.json");
  return summary;
}

// Writes the three visual prompts: numbered part overlay, numbered contour
// points, and the K-candidate imagination grid.
inline void run_render_prompts(const TaskSpec& task, const PipelineConfig& cfg,
                               const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto scene = prepare_scene(task, cfg);
  HandKinematics kin = make_default_hand(cfg.hand_points_per_link);

  // part overlay: tint each region and stamp its id
  Image overlay = scene.render_result.color;
  const Color palette[] = {{230, 80, 80}, {80, 200, 90}, {90, 120, 230}, {230, 200, 70},
                           {200, 90, 210}, {90, 210, 210}, {240, 150, 60}, {150, 150, 150}};
  for (size_t r = 0; r < scene.annotation.regions.size(); ++r) {
    const auto& region = scene.annotation.regions[r];
    Color tint = palette[r % 8];
    long sx = 0, sy = 0, n = 0;
    for (int y = 0; y < region.mask.height; ++y)
      for (int x = 0; x < region.mask.width; ++x) {
        if (!region.mask.at(x, y)) continue;
        auto& px = overlay.at(x, y);
        px.r = uint8_t((px.r + tint.r) / 2);
        px.g = uint8_t((px.g + tint.g) / 2);
        px.b = uint8_t((px.b + tint.b) / 2);
        sx += x;
        sy += y;
        ++n;
      }
    if (n > 0)
      stamp_label(overlay, int(sx / n), int(sy / n), std::to_string(region.id),
                  {255, 255, 255});
  }
  save_png(overlay, out_dir + "/" + task.name + ".som.png");

  // numbered contour points
  Mask2D sil = silhouette(scene.render_result.depth);
  auto pixels = sample_mask_contour(sil, int(cfg.contour_points));
  Image points = scene.render_result.color;
  for (size_t i = 0; i < pixels.size(); ++i)
    stamp_label(points, pixels[i].x(), pixels[i].y(), std::to_string(i + 1), {255, 240, 80});
  save_png(points, out_dir + "/" + task.name + ".points.png");

  // imagination grid for K candidates around a default approach
  Vec3 center = scene.cloud.centroid();
  auto directions = build_direction_set(scene.camera, center);
  Direction3 approach(directions.entries[0].vector);
  auto hull = expand_hull(convex_hull(scene.mesh.vertices), cfg.hull_offset);
  Vec3 position = initial_position(center, approach, hull);
  auto cands = generate_rotation_candidates(Eigen::Matrix<double, 16, 1>::Zero(), position,
                                            optimal_palm_direction(approach),
                                            cfg.rotation_candidates);
  std::vector<RenderResult> with_object, hand_only;
  for (const auto& c : cands) {
    auto hm = hand_mesh(kin, kin.forward_kinematics(c));
    with_object.push_back(
        render({{&scene.mesh, Color{200, 180, 150}}, {&hm, Color{120, 160, 220}}}, scene.camera));
    hand_only.push_back(render({{&hm, Color{120, 160, 220}}}, scene.camera));
  }
  auto composite = compose_imagination(with_object, hand_only);
  save_png(composite.image, out_dir + "/" + task.name + ".imagination.png");
}

// Exit-code mapping shared by the command-line driver.
inline int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::BackendError:
    case ErrorCode::ReasoningParseError:
      return 3;
    case ErrorCode::NoFeasibleRotation:
      return 4;
    case ErrorCode::OptimizationDiverged:
    case ErrorCode::SimulationDiverged:
      return 5;
    default:
      return 2;
  }
}

}  // namespace dexgrasp
