#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <dexgrasp/hand.hpp>
#include <dexgrasp/mesh.hpp>

#include <cstdio>
#include <fstream>

using namespace dexgrasp;

namespace {

GraspPose random_pose(Rng& rng) {
  GraspPose pose;
  pose.translation = rng.unit_vector() * 0.2 * rng.next_double();
  Vec3 w = rng.unit_vector() * rng.uniform(0, M_PI);
  pose.rotation = Quat(Eigen::AngleAxisd(w.norm(), w.normalized()));
  for (int i = 0; i < 16; ++i) pose.theta(i) = rng.uniform(-0.1, 1.0);
  return pose;
}

}  // namespace

TEST_CASE("hand structure: 16 joints, tree rooted at palm, valid limits") {
  auto kin = make_default_hand();
  CHECK(kin.joints.size() == 16);
  CHECK(kin.links[0].parent == -1);
  int roots = 0;
  for (const auto& l : kin.links)
    if (l.parent < 0) ++roots;
  CHECK(roots == 1);
  for (const auto& j : kin.joints) CHECK(j.lo < j.hi);
  // thumb has 4 joints, the rest 3
  int thumb = 0;
  for (const auto& j : kin.joints)
    if (j.name.rfind("thumb", 0) == 0) ++thumb;
  CHECK(thumb == 4);
}

TEST_CASE("forward_kinematics: identity pose keeps palm at origin") {
  auto kin = make_default_hand();
  auto s = kin.forward_kinematics(GraspPose{});
  Vec3 palm_centroid = Vec3::Zero();
  int n = 0;
  for (size_t i = 0; i < s.size(); ++i)
    if (kin.links[s.link_id[i]].is_palm) {
      palm_centroid += s.vertices[i];
      ++n;
    }
  palm_centroid /= n;
  CHECK(palm_centroid.norm() < 1e-9);
}

TEST_CASE("forward_kinematics: pure translation shifts every vertex") {
  auto kin = make_default_hand();
  auto base = kin.forward_kinematics(GraspPose{});
  GraspPose moved;
  moved.translation = Vec3(0.1, 0, 0);
  auto s = kin.forward_kinematics(moved);
  for (size_t i = 0; i < s.size(); ++i)
    CHECK((s.vertices[i] - base.vertices[i] - Vec3(0.1, 0, 0)).norm() < 1e-12);
}

TEST_CASE("forward_kinematics: intra-link rigidity under random poses") {
  auto kin = make_default_hand();
  auto base = kin.forward_kinematics(GraspPose{});
  Rng rng(2024);
  for (int trial = 0; trial < 5; ++trial) {
    auto s = kin.forward_kinematics(random_pose(rng));
    // sample vertex pairs within the same link
    for (size_t i = 0; i + 7 < s.size(); i += 7) {
      for (size_t j = i + 1; j < std::min(i + 5, s.size()); ++j) {
        if (s.link_id[i] != s.link_id[j]) continue;
        double d0 = (base.vertices[i] - base.vertices[j]).norm();
        double d1 = (s.vertices[i] - s.vertices[j]).norm();
        CHECK(std::abs(d0 - d1) <= 1e-9);
      }
    }
  }
}

TEST_CASE("forward_kinematics: NaN pose rejected") {
  auto kin = make_default_hand();
  GraspPose bad;
  bad.translation.x() = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(kin.forward_kinematics(bad), Error);
}

TEST_CASE("fk_jacobian: translation block is identity") {
  auto kin = make_default_hand();
  auto s = kin.forward_kinematics(GraspPose{});
  auto jac = kin.fk_jacobian(GraspPose{}, s);
  for (size_t v = 0; v < s.size(); v += 17)
    CHECK((jac[v].block<3, 3>(0, 0) - Mat3::Identity()).norm() < 1e-12);
}

TEST_CASE("fk_jacobian: joint columns vanish for non-descendant vertices") {
  auto kin = make_default_hand();
  auto s = kin.forward_kinematics(GraspPose{});
  auto jac = kin.fk_jacobian(GraspPose{}, s);
  // index mcp joint is joint 4; palm and thumb vertices must have zero column
  for (size_t v = 0; v < s.size(); ++v)
    if (s.finger_id[v] == 0 || s.finger_id[v] == 1) CHECK(jac[v].col(6 + 4).norm() == 0.0);
}

TEST_CASE("fk_jacobian: matches central finite differences") {
  auto kin = make_default_hand();
  Rng rng(55);
  const double h = 1e-6;
  double max_rel = 0;
  for (int trial = 0; trial < 100; ++trial) {
    GraspPose pose = random_pose(rng);
    auto s = kin.forward_kinematics(pose);
    auto jac = kin.fk_jacobian(pose, s);
    size_t v = rng.next_index(s.size());
    for (int p = 0; p < 22; ++p) {
      auto eval = [&](double eps) {
        GraspPose q = pose;
        if (p < 3) {
          q.translation(p) += eps;
        } else if (p < 6) {
          Vec3 w = Vec3::Zero();
          w(p - 3) = eps;
          q.rotation = Quat(exp_so3(w)) * pose.rotation;
        } else {
          q.theta(p - 6) += eps;
        }
        return kin.forward_kinematics(q).vertices[v];
      };
      Vec3 fd = (eval(h) - eval(-h)) / (2 * h);
      Vec3 an = jac[v].col(p);
      double denom = std::max(1e-6, fd.norm());
      max_rel = std::max(max_rel, (fd - an).norm() / denom);
    }
  }
  CHECK(max_rel <= 1e-4);
}

TEST_CASE("palm_and_finger_directions: canonical and rotation behavior") {
  auto kin = make_default_hand();
  auto [palm, finger] = kin.palm_and_finger_directions(GraspPose{});
  CHECK((palm.vec() - Vec3(0, 0, 1)).norm() < 1e-12);
  CHECK((finger.vec() - Vec3(0, 1, 0)).norm() < 1e-12);

  // rotate 90 degrees about the palm normal: palm unchanged, finger rotated
  GraspPose spun;
  spun.rotation = Quat(Eigen::AngleAxisd(M_PI / 2, Vec3(0, 0, 1)));
  auto [palm2, finger2] = kin.palm_and_finger_directions(spun);
  CHECK((palm2.vec() - Vec3(0, 0, 1)).norm() < 1e-9);
  CHECK((finger2.vec() - Vec3(-1, 0, 0)).norm() < 1e-9);

  // dot product invariant under any rotation
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    GraspPose pose = random_pose(rng);
    auto [p, f] = kin.palm_and_finger_directions(pose);
    CHECK(p.dot(f) == doctest::Approx(0.0).epsilon(1e-9));
  }
}

TEST_CASE("contact_probability: formula values and palm-back zeroing") {
  auto kin = make_default_hand();
  auto s = kin.forward_kinematics(GraspPose{});
  const double sigma = 0.02;

  // single-point cloud exactly at one vertex
  size_t front = 0;
  while (s.palm_back[front]) ++front;
  OrientedPointCloud cloud;
  cloud.points = {s.vertices[front]};
  cloud.normals = {Vec3(0, 0, 1)};
  auto c = contact_probability(s, cloud, sigma);
  CHECK(c[front] == doctest::Approx(1.0));

  // d = sigma -> exp(-0.5); d = 10 sigma -> about zero
  cloud.points = {s.vertices[front] + Vec3(0, 0, sigma)};
  auto c1 = contact_probability(s, cloud, sigma);
  CHECK(c1[front] == doctest::Approx(std::exp(-0.5)).epsilon(1e-9));
  cloud.points = {s.vertices[front] + Vec3(0, 0, 10 * sigma)};
  auto c2 = contact_probability(s, cloud, sigma);
  CHECK(c2[front] <= 1e-21);

  for (size_t i = 0; i < s.size(); ++i)
    if (s.palm_back[i]) CHECK(c[i] == 0.0);
}

TEST_CASE("contact_probability: decreases with distance") {
  auto kin = make_default_hand();
  auto s = kin.forward_kinematics(GraspPose{});
  OrientedPointCloud cloud;
  cloud.points = {Vec3(0, 0.2, 0.05)};
  cloud.normals = {Vec3(0, 0, 1)};
  auto c = contact_probability(s, cloud, 0.02);
  for (size_t i = 0; i < s.size(); ++i) {
    if (s.palm_back[i]) continue;
    for (size_t j = i + 1; j < s.size(); ++j) {
      if (s.palm_back[j]) continue;
      double di = (s.vertices[i] - cloud.points[0]).norm();
      double dj = (s.vertices[j] - cloud.points[0]).norm();
      if (di < dj - 1e-12) CHECK(c[i] > c[j]);
      j += 37;  // sample pairs, full quadratic scan is slow
    }
    i += 11;
  }
}

TEST_CASE("clamp_to_limits") {
  auto kin = make_default_hand();
  Eigen::Matrix<double, 16, 1> theta = Eigen::Matrix<double, 16, 1>::Zero();
  CHECK(kin.clamp_to_limits(theta) == theta);
  theta(4) = kin.joints[4].hi + 0.2;
  auto clamped = kin.clamp_to_limits(theta);
  CHECK(clamped(4) == kin.joints[4].hi);
  theta(4) = kin.joints[4].lo - 1.0;
  CHECK(kin.clamp_to_limits(theta)(4) == kin.joints[4].lo);
}

TEST_CASE("grasp types: library valid against limits, round-trips bit-exactly") {
  auto kin = make_default_hand();
  auto lib = default_grasp_types();
  REQUIRE(lib.size() == 5);
  std::vector<std::string> names;
  for (const auto& g : lib) {
    names.push_back(g.name);
    for (int i = 0; i < 16; ++i) {
      CHECK(g.theta(i) >= kin.joints[i].lo);
      CHECK(g.theta(i) <= kin.joints[i].hi);
    }
  }
  CHECK(names == std::vector<std::string>{"power", "precision-pinch", "lateral-pinch", "tripod",
                                          "hook"});

  save_grasp_types(lib, "gt_rt.json");
  auto back = load_grasp_types("gt_rt.json");
  REQUIRE(back.size() == lib.size());
  for (size_t i = 0; i < lib.size(); ++i) {
    CHECK(back[i].name == lib[i].name);
    CHECK(back[i].description == lib[i].description);
    CHECK(back[i].theta == lib[i].theta);  // bit-exact
  }
  // file contents stable: save the loaded library again and compare bytes
  save_grasp_types(back, "gt_rt2.json");
  std::ifstream f1("gt_rt.json", std::ios::binary), f2("gt_rt2.json", std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(s1 == s2);
  std::remove("gt_rt.json");
  std::remove("gt_rt2.json");
}

TEST_CASE("grasp types: no self-penetration in library poses") {
  auto kin = make_default_hand();
  for (const auto& g : default_grasp_types()) {
    GraspPose pose;
    pose.theta = g.theta;
    auto s = kin.forward_kinematics(pose);
    auto caps = kin.world_capsules(s);
    for (size_t a = 0; a < caps.size(); ++a)
      for (size_t b = a + 1; b < caps.size(); ++b) {
        if (kin.adjacent(caps[a].link, caps[b].link)) continue;
        double d = segment_distance(caps[a].p0, caps[a].p1, caps[b].p0, caps[b].p1);
        CHECK(d >= caps[a].radius + caps[b].radius - 1e-9);
      }
  }
}

TEST_CASE("hand kinematics file round trip") {
  auto kin = make_default_hand();
  save_hand(kin, "hand_rt.json");
  auto back = load_hand("hand_rt.json");
  REQUIRE(back.links.size() == kin.links.size());
  REQUIRE(back.joints.size() == 16);
  auto s0 = kin.forward_kinematics(GraspPose{});
  auto s1 = back.forward_kinematics(GraspPose{});
  REQUIRE(s0.size() == s1.size());
  for (size_t i = 0; i < s0.size(); ++i) CHECK((s0.vertices[i] - s1.vertices[i]).norm() < 1e-15);
  std::remove("hand_rt.json");
}
