#pragma once

#include <functional>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>

#include "dexgrasp/camera.hpp"
#include "dexgrasp/core.hpp"
#include "dexgrasp/hand.hpp"
#include "dexgrasp/hull.hpp"

#include <nlohmann/json.hpp>

namespace dexgrasp {

// ---------------------------------------------------------------------------
// Direction set: 6 cardinals + 12 pairwise diagonals

struct DirectionEntry {
  std::string label;
  Vec3 vector;
};

struct DirectionSet {
  std::vector<DirectionEntry> entries;  // 18, cardinals first

  const DirectionEntry* find(const std::string& label) const {
    for (const auto& e : entries)
      if (e.label == label) return &e;
    return nullptr;
  }
  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    for (const auto& e : entries) out.push_back(e.label);
    return out;
  }
};

// Front points from the region center toward the camera; above follows the
// world up re-orthogonalized against front; right = front x above.
inline DirectionSet build_direction_set(const PinholeCamera& cam, const Vec3& center,
                                        const Vec3& world_up = Vec3(0, 1, 0)) {
  Vec3 cam_pos = cam.center();
  if ((cam_pos - center).norm() < 1e-9)
    throw Error(ErrorCode::DegenerateFrame, "camera at region center");
  Vec3 front = (cam_pos - center).normalized();
  Vec3 above = world_up - world_up.dot(front) * front;
  if (above.norm() < 0.1) {
    // camera looking straight down the up axis; fall back to world x
    above = Vec3(1, 0, 0) - front.x() * front;
  }
  above.normalize();
  Vec3 right = front.cross(above);

  DirectionSet set;
  set.entries = {{"front", front},   {"behind", -front}, {"left", -right},
                 {"right", right},   {"above", above},   {"below", -above}};
  const auto cardinals = set.entries;  // copy before appending
  for (size_t i = 0; i < cardinals.size(); ++i)
    for (size_t j = i + 1; j < cardinals.size(); ++j) {
      Vec3 sum = cardinals[i].vector + cardinals[j].vector;
      if (sum.norm() < 1e-9) continue;  // opposite pair
      set.entries.push_back({cardinals[i].label + "-" + cardinals[j].label, sum.normalized()});
    }
  return set;
}

inline Direction3 optimal_palm_direction(const Direction3& approach) { return -approach; }

// Eq-style initial placement: exit of ray(center, approach) on the expanded hull.
inline Vec3 initial_position(const Vec3& center, const Direction3& approach,
                             const ConvexHull& expanded_hull) {
  return ray_hull_intersect(center, approach, expanded_hull);
}

// K candidates: align the canonical palm normal (+z) to d_palm, then spin
// about d_palm by 2*pi*k/K.
inline std::vector<GraspPose> generate_rotation_candidates(
    const Eigen::Matrix<double, 16, 1>& theta0, const Vec3& position, const Direction3& d_palm,
    int k_candidates) {
  if (k_candidates < 1) throw Error(ErrorCode::InputError, "need K >= 1 candidates");
  Mat3 align = rotation_between(Vec3(0, 0, 1), d_palm.vec());
  std::vector<GraspPose> out;
  for (int k = 0; k < k_candidates; ++k) {
    double angle = 2.0 * M_PI * k / k_candidates;
    Mat3 spin = Eigen::AngleAxisd(angle, d_palm.vec()).toRotationMatrix();
    GraspPose pose;
    pose.translation = position;
    pose.rotation = Quat(spin * align);
    pose.theta = theta0;
    out.push_back(pose);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backends

enum class BackendKind { fixture, heuristic, http };

struct StageRequest {
  std::string stage;
  std::string prompt;
  std::vector<std::string> image_paths;
};

class ReasonerBackend {
 public:
  virtual ~ReasonerBackend() = default;
  virtual BackendKind kind() const = 0;
  virtual bool supports_images() const = 0;
  virtual std::string respond(const StageRequest& request) = 0;
};

// Scripted responses from a JSON file keyed by stage name. A string value
// answers every call for that stage; an array is consumed in order.
class FixtureBackend : public ReasonerBackend {
 public:
  explicit FixtureBackend(const nlohmann::json& script) : script_(script) {}

  static FixtureBackend from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::InputError, "cannot open fixture " + path);
    return FixtureBackend(nlohmann::json::parse(f));
  }

  // Replay: a persisted transcript becomes a fixture script.
  static FixtureBackend from_transcript(const nlohmann::json& transcript) {
    nlohmann::json script = nlohmann::json::object();
    for (const auto& e : transcript) {
      std::string stage = e.at("stage").get<std::string>();
      if (!script.contains(stage)) script[stage] = nlohmann::json::array();
      script[stage].push_back(e.at("response").get<std::string>());
    }
    return FixtureBackend(script);
  }

  BackendKind kind() const override { return BackendKind::fixture; }
  bool supports_images() const override { return false; }

  std::string respond(const StageRequest& request) override {
    if (!script_.contains(request.stage))
      throw Error(ErrorCode::BackendError, "fixture has no response for stage " + request.stage);
    const auto& v = script_[request.stage];
    if (v.is_string()) return v.get<std::string>();
    size_t& cursor = cursors_[request.stage];
    if (cursor >= v.size())
      throw Error(ErrorCode::BackendError, "fixture exhausted for stage " + request.stage);
    return v[cursor++].get<std::string>();
  }

 private:
  nlohmann::json script_;
  std::map<std::string, size_t> cursors_;
};

// Marker backend: the stage operations compute answers geometrically and
// log them; respond() is never consulted.
class HeuristicBackend : public ReasonerBackend {
 public:
  explicit HeuristicBackend(uint64_t seed = 0) : seed_(seed) {}
  BackendKind kind() const override { return BackendKind::heuristic; }
  bool supports_images() const override { return false; }
  std::string respond(const StageRequest&) override {
    throw Error(ErrorCode::BackendError, "heuristic backend answers in-process");
  }
  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
};

struct HttpBackendConfig {
  std::string url;    // e.g. http://host:port/v1/chat/completions
  std::string model = "gpt-4.1";
  std::string api_key_env = "DEXGRASP_API_KEY";
  int timeout_seconds = 120;
};

class HttpBackend : public ReasonerBackend {
 public:
  explicit HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg)) {}
  BackendKind kind() const override { return BackendKind::http; }
  bool supports_images() const override { return true; }
  std::string respond(const StageRequest& request) override;

 private:
  HttpBackendConfig cfg_;
};

// ---------------------------------------------------------------------------
// Session: every request/response is appended to the transcript before
// parsing; `timestamp` is a logical sequence number so replays are
// bit-identical.

struct TranscriptEntry {
  std::string stage;
  std::string prompt;
  std::vector<std::string> images;
  std::string response;
  std::string parsed;
  uint64_t timestamp = 0;  // logical sequence number
  int retry = 0;
};

inline nlohmann::json transcript_to_json(const std::vector<TranscriptEntry>& t) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& e : t)
    out.push_back({{"stage", e.stage},
                   {"prompt", e.prompt},
                   {"images", e.images},
                   {"response", e.response},
                   {"parsed", e.parsed},
                   {"timestamp", e.timestamp},
                   {"retry", e.retry}});
  return out;
}

class ReasonerSession {
 public:
  explicit ReasonerSession(std::shared_ptr<ReasonerBackend> backend)
      : backend_(std::move(backend)) {}

  ReasonerBackend& backend() { return *backend_; }
  BackendKind kind() const { return backend_->kind(); }
  const std::vector<TranscriptEntry>& transcript() const { return transcript_; }

  // One structured re-prompt, then a hard error. The parser returns the
  // canonical parsed form, or nullopt to trigger the retry.
  std::string ask(const std::string& stage, const std::string& prompt,
                  const std::vector<std::string>& images,
                  const std::function<std::optional<std::string>(const std::string&)>& parse) {
    for (int attempt = 0; attempt < 2; ++attempt) {
      std::string full_prompt =
          attempt == 0 ? prompt
                       : prompt + "\nYour previous answer could not be parsed or named an "
                                  "unknown option. Answer again using only the listed options.";
      std::string response;
      try {
        response = backend_->respond({stage, full_prompt, images});
      } catch (const Error& e) {
        if (e.code() == ErrorCode::BackendError) throw;
        throw Error(ErrorCode::BackendError, e.what());
      }
      TranscriptEntry entry{stage, full_prompt, images, response, "", seq_++, attempt};
      auto parsed = parse(response);
      if (parsed) {
        entry.parsed = *parsed;
        transcript_.push_back(entry);
        return *parsed;
      }
      transcript_.push_back(entry);
    }
    throw Error(ErrorCode::ReasoningParseError, "stage " + stage + " unparseable after retry");
  }

  // Heuristic answers flow through the transcript too, so a fixture replay
  // of the transcript reproduces the run.
  std::string record(const std::string& stage, const std::string& prompt,
                     const std::string& answer) {
    transcript_.push_back({stage, prompt, {}, answer, answer, seq_++, 0});
    return answer;
  }

 private:
  std::shared_ptr<ReasonerBackend> backend_;
  std::vector<TranscriptEntry> transcript_;
  uint64_t seq_ = 0;
};

// ---------------------------------------------------------------------------
// Parsing helpers

namespace detail {

inline std::string lower(std::string s) {
  for (auto& c : s) c = char(std::tolower(c));
  return s;
}

// Extracts the integer list following `key`, e.g. "hand:[3, 5]" -> {3, 5}.
inline std::optional<std::vector<int>> parse_id_list(const std::string& text,
                                                     const std::string& key) {
  std::string lo = lower(text);
  size_t pos = lo.find(lower(key));
  if (pos == std::string::npos) return std::nullopt;
  std::vector<int> out;
  size_t i = pos + key.size();
  bool in_number = false;
  int value = 0;
  for (; i < text.size(); ++i) {
    char c = text[i];
    if (std::isdigit(c)) {
      value = value * 10 + (c - '0');
      in_number = true;
    } else {
      if (in_number) {
        out.push_back(value);
        value = 0;
        in_number = false;
      }
      if (c == ']' || c == '\n' || (std::isalpha(c) && c != ' ')) break;
    }
  }
  if (in_number) out.push_back(value);
  if (out.empty()) return std::nullopt;
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Stage operations. Each takes the geometric context the heuristic backend
// needs; fixture/http backends answer from the prompt alone.

struct PartSelection {
  std::vector<int> hand_ids;
  std::vector<int> functional_ids;
};

struct PartInfo {
  int id;
  std::string name;
  size_t pixel_count;
};

inline PartSelection select_contact_parts(ReasonerSession& session,
                                          const std::vector<PartInfo>& parts,
                                          const std::string& task,
                                          const std::vector<std::string>& images = {}) {
  if (parts.empty()) throw Error(ErrorCode::InputError, "empty part annotation");
  auto valid = [&](int id) {
    for (const auto& p : parts)
      if (p.id == id) return true;
    return false;
  };

  std::ostringstream prompt;
  prompt << "Task: " << task << "\nObject parts (id: name):\n";
  for (const auto& p : parts) prompt << "  " << p.id << ": " << p.name << "\n";
  prompt << "Select the part ids the whole hand should contact and the part ids the thumb and "
            "index fingertips should contact.\nAnswer as: hand:[ids], func:[ids]";

  if (session.kind() == BackendKind::heuristic) {
    // Parts whose name appears in the task; largest part as fallback.
    std::string task_lo = detail::lower(task);
    std::vector<int> picked;
    for (const auto& p : parts)
      if (task_lo.find(detail::lower(p.name)) != std::string::npos) picked.push_back(p.id);
    if (picked.empty()) {
      static const char* salient[] = {"handle", "grip", "stem", "neck", "shaft"};
      for (const auto& p : parts)
        for (const char* s : salient)
          if (detail::lower(p.name).find(s) != std::string::npos) picked.push_back(p.id);
    }
    if (picked.empty()) {
      size_t best = 0;
      int id = parts[0].id;
      for (const auto& p : parts)
        if (p.pixel_count > best) {
          best = p.pixel_count;
          id = p.id;
        }
      picked.push_back(id);
    }
    std::ostringstream ans;
    ans << "hand:[";
    for (size_t i = 0; i < picked.size(); ++i) ans << (i ? "," : "") << picked[i];
    ans << "], func:[";
    for (size_t i = 0; i < picked.size(); ++i) ans << (i ? "," : "") << picked[i];
    ans << "]";
    session.record("select_contact_parts", prompt.str(), ans.str());
    return {picked, picked};
  }

  PartSelection result;
  session.ask("select_contact_parts", prompt.str(), images,
              [&](const std::string& text) -> std::optional<std::string> {
                auto hand = detail::parse_id_list(text, "hand");
                auto func = detail::parse_id_list(text, "func");
                if (!hand || !func) return std::nullopt;
                for (int id : *hand)
                  if (!valid(id)) return std::nullopt;
                for (int id : *func)
                  if (!valid(id)) return std::nullopt;
                result.hand_ids = *hand;
                result.functional_ids = *func;
                return text;
              });
  return result;
}

struct PointCandidate {
  int id;                           // 1..n as stamped on the prompt image
  Eigen::Vector2i pixel;
  Vec3 point;                       // back-projected
  std::vector<Vec3> neighbor_normals;
};

inline std::pair<int, int> select_contact_points(ReasonerSession& session,
                                                 const std::vector<PointCandidate>& candidates,
                                                 const std::string& task, double tau_m,
                                                 const std::vector<std::string>& images = {}) {
  if (candidates.size() < 2) throw Error(ErrorCode::InputError, "need >= 2 point candidates");
  auto find = [&](int id) -> const PointCandidate* {
    for (const auto& c : candidates)
      if (c.id == id) return &c;
    return nullptr;
  };

  std::ostringstream prompt;
  prompt << "Task: " << task << "\nThe image shows numbered candidate contact points 1.."
         << candidates.size()
         << " on the object contour. Pick one point for the thumb and a different point for the "
            "index finger.\nAnswer as: thumb:<id>,index:<id>";

  if (session.kind() == BackendKind::heuristic) {
    // Brute force over pairs: maximize worst-finger force-normal alignment.
    int best_thumb = candidates[0].id, best_index = candidates[1].id;
    double best_score = -2;
    for (const auto& a : candidates)
      for (const auto& b : candidates) {
        if (a.id == b.id) continue;
        Vec3 f = a.point - b.point;
        if (f.norm() < 1e-6) continue;
        f.normalize();
        auto best_cos = [&](const std::vector<Vec3>& normals, const Vec3& dir) {
          double best = -2;
          for (const auto& n : normals) best = std::max(best, n.normalized().dot(dir));
          return best;
        };
        double score =
            std::min(best_cos(a.neighbor_normals, f), best_cos(b.neighbor_normals, Vec3(-f)));
        if (score > best_score + 1e-12) {
          best_score = score;
          best_thumb = a.id;
          best_index = b.id;
        }
      }
    (void)tau_m;
    std::string ans = "thumb:" + std::to_string(best_thumb) +
                      ",index:" + std::to_string(best_index);
    session.record("select_contact_points", prompt.str(), ans);
    return {best_thumb, best_index};
  }

  std::pair<int, int> result;
  session.ask("select_contact_points", prompt.str(), images,
              [&](const std::string& text) -> std::optional<std::string> {
                auto thumb = detail::parse_id_list(text, "thumb");
                auto index = detail::parse_id_list(text, "index");
                if (!thumb || !index) return std::nullopt;
                int t = thumb->front(), i = index->front();
                if (t == i || !find(t) || !find(i)) return std::nullopt;
                result = {t, i};
                return text;
              });
  return result;
}

inline std::pair<std::string, Vec3> select_direction(ReasonerSession& session,
                                                     const DirectionSet& directions,
                                                     const std::string& task,
                                                     const Vec3& region_mean_normal,
                                                     const std::vector<std::string>& images = {}) {
  std::ostringstream prompt;
  prompt << "Task: " << task
         << "\nFrom which direction should the hand approach the object? Choose one of:\n";
  for (const auto& e : directions.entries) prompt << "  " << e.label << "\n";
  prompt << "Answer with the direction label only.";

  if (session.kind() == BackendKind::heuristic) {
    // Approach along the outward surface normal of the contact region.
    const DirectionEntry* best = &directions.entries[0];
    double best_dot = -2;
    for (const auto& e : directions.entries) {
      double d = e.vector.dot(region_mean_normal);
      if (d > best_dot + 1e-12) {
        best_dot = d;
        best = &e;
      }
    }
    session.record("select_direction", prompt.str(), best->label);
    return {best->label, best->vector};
  }

  std::pair<std::string, Vec3> result;
  session.ask("select_direction", prompt.str(), images,
              [&](const std::string& text) -> std::optional<std::string> {
                // find the longest label contained in the response
                const DirectionEntry* found = nullptr;
                std::string lo = detail::lower(text);
                size_t best_len = 0;
                for (const auto& e : directions.entries)
                  if (lo.find(e.label) != std::string::npos && e.label.size() > best_len) {
                    found = &e;
                    best_len = e.label.size();
                  }
                if (!found) return std::nullopt;
                result = {found->label, found->vector};
                return found->label;
              });
  return result;
}

inline GraspType select_grasp_type(ReasonerSession& session, const std::vector<GraspType>& library,
                                   const std::string& task, double functional_extent_m,
                                   const std::vector<std::string>& images = {}) {
  if (library.empty()) throw Error(ErrorCode::ConfigError, "empty grasp type library");
  std::ostringstream prompt;
  prompt << "Task: " << task << "\nAvailable grasp types:\n";
  for (const auto& g : library) prompt << "  " << g.name << ": " << g.description << "\n";
  prompt << "Answer with the grasp type name only.";

  if (session.kind() == BackendKind::heuristic) {
    std::string pick = functional_extent_m > 0.06 ? "power" : "precision-pinch";
    const GraspType* found = nullptr;
    for (const auto& g : library)
      if (g.name == pick) found = &g;
    if (!found) found = &library[0];
    session.record("select_grasp_type", prompt.str(), found->name);
    return *found;
  }

  const GraspType* result = nullptr;
  session.ask("select_grasp_type", prompt.str(), images,
              [&](const std::string& text) -> std::optional<std::string> {
                std::string lo = detail::lower(text);
                size_t best_len = 0;
                for (const auto& g : library)
                  if (lo.find(detail::lower(g.name)) != std::string::npos &&
                      g.name.size() > best_len) {
                    result = &g;
                    best_len = g.name.size();
                  }
                if (!result) return std::nullopt;
                return result->name;
              });
  return *result;
}

// Chooses among surviving rotation candidates. `survivors` holds candidate
// indices (into the imagination tile labels, 1-based labels). The heuristic
// score callback returns a cost; lowest wins.
inline int select_rotation(ReasonerSession& session, const ImaginationComposite& composite,
                           const std::vector<size_t>& survivors,
                           const std::function<double(size_t)>& heuristic_cost,
                           const std::vector<std::string>& images = {}) {
  if (survivors.empty()) throw Error(ErrorCode::NoFeasibleRotation, "no surviving candidates");
  if (survivors.size() == 1) {
    session.record("select_rotation", "single surviving candidate",
                   std::to_string(survivors[0] + 1));
    return int(survivors[0]);
  }

  std::ostringstream prompt;
  prompt << "The composite image shows labeled candidate hand placements (left: hand with "
            "object, right: hand alone). Valid labels:";
  for (size_t s : survivors) prompt << " " << (s + 1);
  prompt << "\nAnswer with the label of the most natural grasp.";

  if (session.kind() == BackendKind::heuristic) {
    size_t best = survivors[0];
    double best_cost = std::numeric_limits<double>::max();
    for (size_t s : survivors) {
      double c = heuristic_cost(s);
      if (c < best_cost - 1e-12) {
        best_cost = c;
        best = s;
      }
    }
    session.record("select_rotation", prompt.str(), std::to_string(best + 1));
    return int(best);
  }

  int result = -1;
  session.ask("select_rotation", prompt.str(), images,
              [&](const std::string& text) -> std::optional<std::string> {
                for (char c : text)
                  if (std::isdigit(c)) {
                    int label = c - '0';
                    // two-digit labels
                    size_t pos = text.find(c);
                    if (pos + 1 < text.size() && std::isdigit(text[pos + 1]))
                      label = label * 10 + (text[pos + 1] - '0');
                    for (size_t s : survivors)
                      if (int(s + 1) == label) {
                        result = int(s);
                        return std::to_string(label);
                      }
                    return std::nullopt;
                  }
                return std::nullopt;
              });
  (void)composite;
  return result;
}

// ---------------------------------------------------------------------------
// HTTP backend

namespace detail {

inline std::string base64_encode(const std::string& bytes) {
  static const char tbl[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    uint32_t v = (uint8_t(bytes[i]) << 16) | (uint8_t(bytes[i + 1]) << 8) | uint8_t(bytes[i + 2]);
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += tbl[(v >> 6) & 63];
    out += tbl[v & 63];
  }
  if (i + 1 == bytes.size()) {
    uint32_t v = uint8_t(bytes[i]) << 16;
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += "==";
  } else if (i + 2 == bytes.size()) {
    uint32_t v = (uint8_t(bytes[i]) << 16) | (uint8_t(bytes[i + 1]) << 8);
    out += tbl[(v >> 18) & 63];
    out += tbl[(v >> 12) & 63];
    out += tbl[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

inline std::string read_binary_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::InputError, "cannot open image " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Splits "http://host:port/path" into origin and path.
inline std::pair<std::string, std::string> split_url(const std::string& url) {
  size_t scheme = url.find("://");
  if (scheme == std::string::npos) throw Error(ErrorCode::ConfigError, "bad backend url " + url);
  size_t path = url.find('/', scheme + 3);
  if (path == std::string::npos) return {url, "/"};
  return {url.substr(0, path), url.substr(path)};
}

}  // namespace detail

}  // namespace dexgrasp

#include <httplib.h>

namespace dexgrasp {

inline std::string HttpBackend::respond(const StageRequest& request) {
  nlohmann::json content = nlohmann::json::array();
  content.push_back({{"type", "text"}, {"text", request.prompt}});
  for (const auto& path : request.image_paths) {
    std::string uri =
        "data:image/png;base64," + detail::base64_encode(detail::read_binary_file(path));
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", uri}}}});
  }
  nlohmann::json body = {{"model", cfg_.model},
                         {"messages", {{{"role", "user"}, {"content", content}}}}};

  auto [origin, path] = detail::split_url(cfg_.url);
  httplib::Client client(origin);
  client.set_read_timeout(cfg_.timeout_seconds, 0);
  client.set_connection_timeout(cfg_.timeout_seconds, 0);
  httplib::Headers headers;
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()))
    headers.emplace("Authorization", std::string("Bearer ") + key);

  auto res = client.Post(path, headers, body.dump(), "application/json");
  if (!res)
    throw Error(ErrorCode::BackendError,
                "http backend unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200)
    throw Error(ErrorCode::BackendError,
                "http backend status " + std::to_string(res->status) + ": " + res->body);
  try {
    auto j = nlohmann::json::parse(res->body);
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::BackendError, std::string("malformed backend reply: ") + e.what());
  }
}

}  // namespace dexgrasp
