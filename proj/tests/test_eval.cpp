#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dexgrasp/eval.hpp"

using namespace dexgrasp;

namespace {

OrientedPointCloud sphere_cloud(double radius, size_t n, uint64_t seed) {
  return sample_surface(make_icosphere(radius, 3), n, seed);
}

// 26 cage points just inside a sphere of the given radius.
std::vector<Vec3> cage_points(double radius) {
  std::vector<Vec3> pts;
  for (int x = -1; x <= 1; ++x)
    for (int y = -1; y <= 1; ++y)
      for (int z = -1; z <= 1; ++z) {
        if (x == 0 && y == 0 && z == 0) continue;
        pts.push_back(radius * Vec3(x, y, z).normalized());
      }
  return pts;
}

HandSurface synthetic_surface(const std::vector<Vec3>& vertices,
                              const std::vector<int>& finger_id) {
  HandSurface s;
  s.vertices = vertices;
  s.normals.assign(vertices.size(), Vec3(0, 0, 1));
  s.finger_id = finger_id;
  s.functional.assign(vertices.size(), 0);
  s.palm_back.assign(vertices.size(), 0);
  s.link_id.assign(vertices.size(), 0);
  return s;
}

// Object with two labeled halves: part 1 where y >= 0, part 2 below.
OrientedPointCloud labeled_cylinder() {
  auto cloud = sample_surface(make_cylinder(0.02, 0.2), 2000, 11);
  cloud.part_labels.resize(cloud.size());
  for (size_t i = 0; i < cloud.size(); ++i)
    cloud.part_labels[i] = cloud.points[i].y() >= 0 ? 1 : 2;
  return cloud;
}

}  // namespace

TEST_CASE("penetration metrics: disjoint meshes give zero") {
  auto a = make_box(Vec3(0.05, 0.05, 0.05));
  auto b = make_box(Vec3(0.05, 0.05, 0.05), Vec3(0.5, 0, 0));
  auto surf_b = sample_surface(b, 800, 2);
  OrientedPointCloud verts_a = sample_surface(a, 200, 3);
  auto [p_vol, p_dep] = penetration_metrics(a, verts_a, b, surf_b);
  CHECK(p_vol == 0.0);
  CHECK(p_dep == 0.0);
}

TEST_CASE("penetration volume: 1 cm^3 nested cube within 5 percent") {
  auto big = make_box(Vec3(0.05, 0.05, 0.05));
  auto small = make_box(Vec3(0.005, 0.005, 0.005));
  auto surf_big = sample_surface(big, 800, 2);
  OrientedPointCloud verts;
  verts.points = {Vec3(0.2, 0, 0)};  // keep depth out of the picture
  verts.normals = {Vec3(1, 0, 0)};
  auto [p_vol, p_dep] = penetration_metrics(small, verts, big, surf_big);
  CHECK(p_vol == doctest::Approx(1.0).epsilon(0.05));
  CHECK(p_dep == 0.0);
}

TEST_CASE("penetration depth: vertex 0.4 cm inside a sphere") {
  auto sphere = make_icosphere(0.05, 3);
  auto surf = sample_surface(sphere, 4000, 5);
  OrientedPointCloud verts;
  verts.points = {Vec3(0.046, 0, 0), Vec3(0.2, 0, 0)};
  verts.normals = {Vec3(1, 0, 0), Vec3(1, 0, 0)};
  auto tiny = make_box(Vec3(1e-4, 1e-4, 1e-4), Vec3(5, 5, 5));
  auto [p_vol, p_dep] = penetration_metrics(tiny, verts, sphere, surf);
  (void)p_vol;
  CHECK(p_dep == doctest::Approx(0.4).epsilon(0.05));
}

TEST_CASE("free fall matches half g t squared within one percent") {
  auto object = sphere_cloud(0.03, 600, 7);
  auto sim = simulate_displacement({}, object);
  double expected_cm = 0.5 * 9.81 * 2.0 * 2.0 * 100.0;
  CHECK(std::abs(sim.sim_dis_cm - expected_cm) / expected_cm < 0.01);
  CHECK_FALSE(simulation_success(sim, 0.0));
}

TEST_CASE("gravity disabled keeps the object still") {
  auto object = sphere_cloud(0.03, 600, 7);
  SimConfig cfg;
  cfg.gravity = 0;
  // cage just outside the surface: no contact, no force, no motion
  auto sim = simulate_displacement(cage_points(0.032), object, cfg);
  CHECK(sim.sim_dis_cm == 0.0);
}

TEST_CASE("caged object barely moves and the hold counts as success") {
  auto object = sphere_cloud(0.03, 600, 7);
  auto sim = simulate_displacement(cage_points(0.028), object);
  CHECK(sim.sim_dis_cm <= 0.5);
  for (int c : sim.contacts_per_step) CHECK(c >= 1);
  CHECK(simulation_success(sim, 0.2));

  // removing the contacts strictly loosens the hold
  auto fall = simulate_displacement({}, object);
  CHECK(fall.sim_dis_cm > sim.sim_dis_cm);
}

TEST_CASE("simulation is deterministic") {
  auto object = sphere_cloud(0.03, 600, 7);
  auto a = simulate_displacement(cage_points(0.028), object);
  auto b = simulate_displacement(cage_points(0.028), object);
  CHECK(a.sim_dis_cm == b.sim_dis_cm);
  CHECK((a.final_translation - b.final_translation).norm() == 0.0);
}

TEST_CASE("success threshold flips at one centimeter of depth") {
  SimResult sim;
  sim.contacts_per_step.assign(480, 3);
  CHECK(simulation_success(sim, 0.999));
  CHECK_FALSE(simulation_success(sim, 1.0));
  CHECK_FALSE(simulation_success(sim, 1.2));

  // a contact-free step after the settling window breaks success
  sim.contacts_per_step[400] = 0;
  CHECK_FALSE(simulation_success(sim, 0.3));
  // but losing contact inside the first 0.1 s is tolerated
  SimResult early;
  early.contacts_per_step.assign(480, 2);
  for (int i = 0; i < 20; ++i) early.contacts_per_step[i] = 0;
  CHECK(simulation_success(early, 0.3));
}

TEST_CASE("unstable stiffness budget reports divergence") {
  auto object = sphere_cloud(0.03, 400, 7);
  SimConfig cfg;
  cfg.stiffness = 1e18;
  cfg.stiffness_budget_factor = 1e18;
  CHECK_THROWS_AS(simulate_displacement(cage_points(0.028), object, cfg), Error);
}

TEST_CASE("part accuracy needs a hand vertex near a ground-truth part") {
  auto object = labeled_cylinder();
  // vertex right on the top half (part 1)
  auto touching = synthetic_surface({Vec3(0.02, 0.05, 0)}, {2});
  CHECK(part_accuracy(touching, object, {1}));
  CHECK_FALSE(part_accuracy(touching, object, {2}));

  // 4 mm away still counts, 8 mm does not
  auto near4 = synthetic_surface({Vec3(0.024, 0.05, 0)}, {2});
  CHECK(part_accuracy(near4, object, {1}));
  auto near8 = synthetic_surface({Vec3(0.028, 0.05, 0)}, {2});
  CHECK_FALSE(part_accuracy(near8, object, {1}));

  OrientedPointCloud unlabeled = sample_surface(make_box(Vec3(0.05, 0.05, 0.05)), 100, 1);
  CHECK_THROWS_AS(part_accuracy(touching, unlabeled, {1}), Error);
}

TEST_CASE("semantic contact ratio over finger vertices") {
  auto object = labeled_cylinder();
  // two finger vertices on part 1, on the lateral surface
  auto all_gt = synthetic_surface({Vec3(0.02, 0.05, 0), Vec3(0.02, 0.07, 0)}, {2, 3});
  CHECK(semantic_contact_ratio(all_gt, object, {1}) == 1.0);

  // one vertex per half -> 0.5
  auto split = synthetic_surface({Vec3(0.02, 0.05, 0), Vec3(0.02, -0.05, 0)}, {2, 2});
  CHECK(semantic_contact_ratio(split, object, {1}) == doctest::Approx(0.5).epsilon(1e-12));

  // palm vertices are ignored
  auto palm_only = synthetic_surface({Vec3(0.02, 0.05, 0)}, {0});
  CHECK(semantic_contact_ratio(palm_only, object, {1}) == 0.0);

  // far from the object -> 0
  auto far = synthetic_surface({Vec3(1, 1, 1)}, {2});
  CHECK(semantic_contact_ratio(far, object, {1}) == 0.0);

  // part accuracy implies a positive ratio when fingers do the touching
  CHECK(part_accuracy(all_gt, object, {1}));
  CHECK(semantic_contact_ratio(all_gt, object, {1}) > 0);
}

TEST_CASE("batch aggregation and twist exclusion") {
  TaskMetrics a{"pour", {2.0, 0.4, 1.0, true, true, 0.9, false}};
  TaskMetrics b{"twist cap", {4.0, 0.6, 300.0, false, false, 0.5, true}};

  auto single = batch_evaluate({a});
  CHECK(single.aggregate["p_vol_cm3"] == doctest::Approx(2.0));
  CHECK(single.aggregate["p_dep_cm"] == doctest::Approx(0.4));
  CHECK(single.aggregate["sim_dis_cm"] == doctest::Approx(1.0));
  CHECK(single.aggregate["sim_suc"] == doctest::Approx(1.0));
  CHECK(single.aggregate["part_acc"] == doctest::Approx(1.0));
  CHECK(single.aggregate["sc_ratio"] == doctest::Approx(0.9));

  auto both = batch_evaluate({a, b});
  CHECK(both.aggregate["tasks"] == 2);
  CHECK(both.aggregate["sim_tasks"] == 1);
  CHECK(both.aggregate["p_vol_cm3"] == doctest::Approx(3.0));
  // twist task excluded from simulation means only
  CHECK(both.aggregate["sim_dis_cm"] == doctest::Approx(1.0));
  CHECK(both.aggregate["sim_suc"] == doctest::Approx(1.0));
  CHECK(both.aggregate["sc_ratio"] == doctest::Approx(0.7));

  std::istringstream csv(both.csv);
  std::string header, row1, row2;
  std::getline(csv, header);
  std::getline(csv, row1);
  std::getline(csv, row2);
  CHECK(header == "task,p_vol_cm3,p_dep_cm,sim_dis_cm,sim_suc,part_acc,sc_ratio,twist");
  CHECK(row1.rfind("pour,", 0) == 0);
  CHECK(row2.find(",,") != std::string::npos);  // sim cells left empty

  CHECK_THROWS_AS(batch_evaluate({}), Error);
}

TEST_CASE("batch files round trip") {
  TaskMetrics a{"lift", {1.0, 0.1, 0.5, true, true, 1.0, false}};
  auto summary = batch_evaluate({a});
  save_batch(summary, "batch_rt.csv", "batch_rt.json");
  std::ifstream c("batch_rt.csv");
  std::stringstream cs;
  cs << c.rdbuf();
  CHECK(cs.str() == summary.csv);
  std::ifstream j("batch_rt.json");
  auto parsed = nlohmann::json::parse(j);
  CHECK(parsed == summary.aggregate);
  std::remove("batch_rt.csv");
  std::remove("batch_rt.json");
}
