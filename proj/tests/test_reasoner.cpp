#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <thread>

#include "dexgrasp/mesh.hpp"
#include "dexgrasp/reasoner.hpp"

using namespace dexgrasp;
using nlohmann::json;

namespace {

PinholeCamera camera_at(const Vec3& eye, const Vec3& target) { return look_at(eye, target); }

std::shared_ptr<ReasonerBackend> fixture(const json& script) {
  return std::make_shared<FixtureBackend>(script);
}

std::shared_ptr<ReasonerBackend> heuristic() { return std::make_shared<HeuristicBackend>(); }

}  // namespace

TEST_CASE("direction set has 18 unit entries with consistent structure") {
  auto cam = camera_at(Vec3(0.3, 0.2, 0.5), Vec3::Zero());
  auto set = build_direction_set(cam, Vec3::Zero());
  REQUIRE(set.entries.size() == 18);
  for (const auto& e : set.entries) CHECK(std::abs(e.vector.norm() - 1.0) < 1e-9);

  auto v = [&](const std::string& label) { return set.find(label)->vector; };
  CHECK((v("front") + v("behind")).norm() < 1e-12);
  CHECK((v("left") + v("right")).norm() < 1e-12);
  CHECK((v("above") + v("below")).norm() < 1e-12);
  // diagonals are normalized sums of their cardinal pair
  for (const auto& e : set.entries) {
    auto dash = e.label.find('-');
    if (dash == std::string::npos) continue;
    Vec3 sum = v(e.label.substr(0, dash)) + v(e.label.substr(dash + 1));
    CHECK((e.vector - sum.normalized()).norm() < 1e-12);
  }
  // no opposite pairs among the diagonals
  int diagonals = 0;
  for (const auto& e : set.entries)
    if (e.label.find('-') != std::string::npos) ++diagonals;
  CHECK(diagonals == 12);
}

TEST_CASE("camera on +z with origin center gives the worked frame") {
  auto cam = camera_at(Vec3(0, 0, 1), Vec3::Zero());
  auto set = build_direction_set(cam, Vec3::Zero());
  CHECK((set.find("front")->vector - Vec3(0, 0, 1)).norm() < 1e-12);
  CHECK((set.find("above")->vector - Vec3(0, 1, 0)).norm() < 1e-12);
  CHECK((set.find("right")->vector - Vec3(-1, 0, 0)).norm() < 1e-12);
}

TEST_CASE("degenerate up axis falls back to world x") {
  auto cam = camera_at(Vec3(0, 1, 0), Vec3::Zero());
  auto set = build_direction_set(cam, Vec3::Zero());
  Vec3 above = set.find("above")->vector;
  CHECK(std::abs(above.dot(set.find("front")->vector)) < 1e-9);
  CHECK(std::abs(above.norm() - 1.0) < 1e-9);
  CHECK((above - Vec3(1, 0, 0)).norm() < 1e-9);
}

TEST_CASE("initial position sits on the expanded hull along the approach ray") {
  auto cube = make_box(Vec3(0.05, 0.05, 0.05));
  auto hull = expand_hull(convex_hull(cube.vertices), 0.10);
  Direction3 d(Vec3(0, 0, 1));
  Vec3 t = initial_position(Vec3::Zero(), d, hull);
  CHECK((t - Vec3(0, 0, 0.15)).norm() < 1e-9);
}

TEST_CASE("rotation candidates align the palm and spin evenly") {
  Eigen::Matrix<double, 16, 1> theta0 = Eigen::Matrix<double, 16, 1>::Constant(0.2);
  Direction3 d_palm(Vec3(1, 1, 0).normalized());
  Vec3 pos(0.1, 0.2, 0.3);
  auto cands = generate_rotation_candidates(theta0, pos, d_palm, 4);
  REQUIRE(cands.size() == 4);
  for (const auto& c : cands) {
    CHECK((c.translation - pos).norm() < 1e-12);
    CHECK((c.rotation * Vec3(0, 0, 1) - d_palm.vec()).norm() < 1e-9);
    CHECK((c.theta - theta0).norm() < 1e-12);
  }
  // consecutive candidates differ by a 90-degree spin about the palm axis
  for (int k = 1; k < 4; ++k) {
    Mat3 delta = (cands[k].rotation * cands[0].rotation.conjugate()).toRotationMatrix();
    Eigen::AngleAxisd aa(delta);
    double expected = std::min(M_PI_2 * k, 2 * M_PI - M_PI_2 * k);  // AngleAxis wraps to [0, pi]
    CHECK(std::abs(aa.angle() - expected) < 1e-9);
    CHECK(std::abs(std::abs(aa.axis().dot(d_palm.vec())) - 1.0) < 1e-9);
  }
  CHECK_THROWS_AS(generate_rotation_candidates(theta0, pos, d_palm, 0), Error);
}

TEST_CASE("fixture backend: string repeats, array consumes, missing stage throws") {
  FixtureBackend b(json{{"a", "always"}, {"b", json::array({"first", "second"})}});
  CHECK(b.respond({"a", "", {}}) == "always");
  CHECK(b.respond({"a", "", {}}) == "always");
  CHECK(b.respond({"b", "", {}}) == "first");
  CHECK(b.respond({"b", "", {}}) == "second");
  CHECK_THROWS_AS(b.respond({"b", "", {}}), Error);
  CHECK_THROWS_AS(b.respond({"missing", "", {}}), Error);
}

TEST_CASE("session retries once then fails with a parse error") {
  ReasonerSession session(fixture(json{{"s", json::array({"garbage", "ok"})}}));
  auto parse = [](const std::string& t) -> std::optional<std::string> {
    if (t == "ok") return t;
    return std::nullopt;
  };
  CHECK(session.ask("s", "prompt", {}, parse) == "ok");
  REQUIRE(session.transcript().size() == 2);
  CHECK(session.transcript()[0].retry == 0);
  CHECK(session.transcript()[0].parsed.empty());
  CHECK(session.transcript()[1].retry == 1);
  CHECK(session.transcript()[1].prompt != "prompt");  // re-prompt is annotated
  CHECK(session.transcript()[0].timestamp == 0);
  CHECK(session.transcript()[1].timestamp == 1);

  ReasonerSession bad(fixture(json{{"s", json::array({"garbage", "garbage"})}}));
  CHECK_THROWS_AS(bad.ask("s", "prompt", {}, parse), Error);
}

TEST_CASE("contact part selection parses ids and rejects unknown ones") {
  std::vector<PartInfo> parts = {{1, "head", 900}, {3, "handle", 1200}};
  ReasonerSession session(fixture(json{{"select_contact_parts", "hand:[3], func:[3]"}}));
  auto sel = select_contact_parts(session, parts, "hammer a nail");
  CHECK(sel.hand_ids == std::vector<int>{3});
  CHECK(sel.functional_ids == std::vector<int>{3});

  // first answer names id 9 which does not exist; retry succeeds
  ReasonerSession retry(fixture(
      json{{"select_contact_parts", json::array({"hand:[9], func:[9]", "hand:[1], func:[3]"})}}));
  auto sel2 = select_contact_parts(retry, parts, "hammer a nail");
  CHECK(sel2.hand_ids == std::vector<int>{1});
  CHECK(sel2.functional_ids == std::vector<int>{3});
}

TEST_CASE("heuristic part selection picks parts named in the task") {
  std::vector<PartInfo> parts = {{1, "head", 900}, {3, "handle", 1200}};
  ReasonerSession session(heuristic());
  auto sel = select_contact_parts(session, parts, "grab the hammer by the handle");
  CHECK(sel.hand_ids == std::vector<int>{3});
  REQUIRE(session.transcript().size() == 1);
  CHECK(session.transcript()[0].stage == "select_contact_parts");

  // no part named; salient keyword fallback still finds the handle
  ReasonerSession s2(heuristic());
  CHECK(select_contact_parts(s2, parts, "hammer a nail").hand_ids == std::vector<int>{3});

  // neither name nor keyword: largest part wins
  std::vector<PartInfo> plain = {{1, "top", 900}, {2, "base", 1200}};
  ReasonerSession s3(heuristic());
  CHECK(select_contact_parts(s3, plain, "pick it up").hand_ids == std::vector<int>{2});
}

TEST_CASE("contact point selection parses thumb/index and rejects equal ids") {
  std::vector<PointCandidate> cands;
  for (int i = 1; i <= 12; ++i)
    cands.push_back({i, {0, 0}, Vec3(0.01 * i, 0, 0), {Vec3(0, 0, 1)}});
  ReasonerSession session(fixture(json{{"select_contact_points", "thumb:5,index:12"}}));
  auto picked = select_contact_points(session, cands, "pinch", 0.7);
  CHECK(picked.first == 5);
  CHECK(picked.second == 12);

  ReasonerSession bad(fixture(json{{"select_contact_points", "thumb:4,index:4"}}));
  CHECK_THROWS_AS(select_contact_points(bad, cands, "pinch", 0.7), Error);
}

TEST_CASE("heuristic point selection prefers opposing surface normals") {
  // slab: point 1 on top (+z), point 2 also on top, point 3 on the bottom
  std::vector<PointCandidate> cands = {
      {1, {0, 0}, Vec3(0.02, 0, 0.01), {Vec3(0, 0, 1)}},
      {2, {0, 0}, Vec3(-0.02, 0, 0.01), {Vec3(0, 0, 1)}},
      {3, {0, 0}, Vec3(0, 0, -0.01), {Vec3(0, 0, -1)}},
  };
  ReasonerSession session(heuristic());
  auto picked = select_contact_points(session, cands, "pinch the slab", 0.7);
  // one finger on top, the other on the bottom
  bool opposing = (picked.first == 3) != (picked.second == 3);
  CHECK(opposing);
}

TEST_CASE("direction selection matches labels and drives the heuristic by normals") {
  auto cam = camera_at(Vec3(0, 0, 1), Vec3::Zero());
  auto set = build_direction_set(cam, Vec3::Zero());

  ReasonerSession session(fixture(json{{"select_direction", "I would pick front-above."}}));
  auto [label, vec] = select_direction(session, set, "lift", Vec3(0, 0, 1));
  CHECK(label == "front-above");
  CHECK((vec - Vec3(0, 1, 1).normalized()).norm() < 1e-12);

  ReasonerSession h(heuristic());
  auto [hl, hv] = select_direction(h, set, "lift", Vec3(0, 1, 0));
  CHECK(hl == "above");
}

TEST_CASE("grasp type selection by name and by functional extent") {
  auto library = default_grasp_types();
  ReasonerSession session(fixture(json{{"select_grasp_type", "precision-pinch"}}));
  CHECK(select_grasp_type(session, library, "pick up a pen", 0.01).name == "precision-pinch");

  ReasonerSession big(heuristic());
  CHECK(select_grasp_type(big, library, "grab", 0.12).name == "power");
  ReasonerSession small(heuristic());
  CHECK(select_grasp_type(small, library, "grab", 0.02).name == "precision-pinch");
}

TEST_CASE("rotation selection skips the backend for a single survivor") {
  ImaginationComposite comp;
  comp.tiles = {{"1", 0}, {"2", 1}, {"3", 2}, {"4", 3}};
  ReasonerSession session(fixture(json::object()));  // would throw if consulted
  CHECK(select_rotation(session, comp, {2}, nullptr) == 2);
  REQUIRE(session.transcript().size() == 1);
  CHECK(session.transcript()[0].parsed == "3");
}

TEST_CASE("rotation selection parses tile labels and applies heuristic cost") {
  ImaginationComposite comp;
  comp.tiles = {{"1", 0}, {"2", 1}, {"3", 2}, {"4", 3}};
  ReasonerSession session(fixture(json{{"select_rotation", "Grasp 3 looks most natural"}}));
  CHECK(select_rotation(session, comp, {0, 2}, nullptr) == 2);

  // label 2 is not among the survivors -> retry -> error
  ReasonerSession bad(fixture(json{{"select_rotation", "2"}}));
  CHECK_THROWS_AS(select_rotation(bad, comp, {0, 2}, nullptr), Error);

  ReasonerSession h(heuristic());
  auto cost = [](size_t k) { return k == 2 ? 0.1 : 1.0; };
  CHECK(select_rotation(h, comp, {0, 2, 3}, cost) == 2);

  ReasonerSession none(heuristic());
  CHECK_THROWS_AS(select_rotation(none, comp, {}, cost), Error);
}

TEST_CASE("transcript replay reproduces heuristic answers through the fixture backend") {
  std::vector<PartInfo> parts = {{1, "head", 900}, {3, "handle", 1200}};
  auto cam = camera_at(Vec3(0, 0, 1), Vec3::Zero());
  auto set = build_direction_set(cam, Vec3::Zero());
  auto library = default_grasp_types();

  ReasonerSession live(heuristic());
  auto sel = select_contact_parts(live, parts, "grab the handle");
  auto dir = select_direction(live, set, "grab the handle", Vec3(1, 0, 0));
  auto type = select_grasp_type(live, library, "grab the handle", 0.09);
  json transcript = transcript_to_json(live.transcript());

  ReasonerSession replay(
      std::make_shared<FixtureBackend>(FixtureBackend::from_transcript(transcript)));
  auto sel2 = select_contact_parts(replay, parts, "grab the handle");
  auto dir2 = select_direction(replay, set, "grab the handle", Vec3(1, 0, 0));
  auto type2 = select_grasp_type(replay, library, "grab the handle", 0.09);

  CHECK(sel2.hand_ids == sel.hand_ids);
  CHECK(sel2.functional_ids == sel.functional_ids);
  CHECK(dir2.first == dir.first);
  CHECK(type2.name == type.name);
  // the replayed transcript carries the same responses in the same order
  json transcript2 = transcript_to_json(replay.transcript());
  REQUIRE(transcript2.size() == transcript.size());
  for (size_t i = 0; i < transcript.size(); ++i) {
    CHECK(transcript2[i]["stage"] == transcript[i]["stage"]);
    CHECK(transcript2[i]["response"] == transcript[i]["response"]);
    CHECK(transcript2[i]["timestamp"] == transcript[i]["timestamp"]);
  }
}

TEST_CASE("http backend posts chat-completion requests with image payloads") {
  httplib::Server server;
  json seen;
  std::string seen_auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    if (req.has_header("Authorization")) seen_auth = req.get_header_value("Authorization");
    json reply = {{"choices", {{{"message", {{"content", "above"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  // a tiny PNG to ship as a data URI
  Image img(2, 2, {255, 0, 0});
  std::string img_path = "/tmp/dexgrasp_http_test.png";
  save_png(img, img_path);

  setenv("DEXGRASP_API_KEY", "sekrit", 1);
  HttpBackendConfig cfg;
  cfg.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  HttpBackend backend(cfg);
  std::string answer = backend.respond({"select_direction", "which way?", {img_path}});
  CHECK(answer == "above");
  CHECK(seen_auth == "Bearer sekrit");
  CHECK(seen["model"] == cfg.model);
  REQUIRE(seen["messages"].size() == 1);
  auto content = seen["messages"][0]["content"];
  REQUIRE(content.size() == 2);
  CHECK(content[0]["type"] == "text");
  CHECK(content[0]["text"] == "which way?");
  CHECK(content[1]["type"] == "image_url");
  std::string uri = content[1]["image_url"]["url"].get<std::string>();
  CHECK(uri.rfind("data:image/png;base64,", 0) == 0);
  CHECK(uri.size() > 30);

  server.stop();
  t.join();
}

TEST_CASE("http backend surfaces transport and status errors") {
  HttpBackendConfig cfg;
  cfg.url = "http://127.0.0.1:9/v1/chat/completions";  // nothing listens here
  cfg.timeout_seconds = 2;
  HttpBackend unreachable(cfg);
  CHECK_THROWS_AS(unreachable.respond({"s", "p", {}}), Error);

  httplib::Server server;
  server.Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
    res.set_content("boom", "text/plain");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  HttpBackendConfig cfg2 = cfg;
  cfg2.url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  HttpBackend failing(cfg2);
  CHECK_THROWS_AS(failing.respond({"s", "p", {}}), Error);
  server.stop();
  t.join();
}

TEST_CASE("base64 encoding matches known vectors") {
  CHECK(detail::base64_encode("") == "");
  CHECK(detail::base64_encode("f") == "Zg==");
  CHECK(detail::base64_encode("fo") == "Zm8=");
  CHECK(detail::base64_encode("foo") == "Zm9v");
  CHECK(detail::base64_encode("foobar") == "Zm9vYmFy");
}
