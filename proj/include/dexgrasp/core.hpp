#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace dexgrasp {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Quat = Eigen::Quaterniond;

enum class ErrorCode {
  InvalidMesh,
  DegenerateHull,
  OriginOutsideHull,
  NoIntersection,
  EmptyCloud,
  InvalidPose,
  InvalidCamera,
  EmptyMask,
  UnknownRegion,
  NoVisibleContact,
  InvalidContactPixel,
  BackendError,
  ReasoningParseError,
  NoFeasibleRotation,
  DegenerateForceAxis,
  DegenerateFrame,
  EmptyContactTarget,
  SimulationDiverged,
  OptimizationDiverged,
  EmptyBatch,
  InputError,
  ConfigError,
};

inline const char* error_code_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::InvalidMesh: return "InvalidMesh";
    case ErrorCode::DegenerateHull: return "DegenerateHull";
    case ErrorCode::OriginOutsideHull: return "OriginOutsideHull";
    case ErrorCode::NoIntersection: return "NoIntersection";
    case ErrorCode::EmptyCloud: return "EmptyCloud";
    case ErrorCode::InvalidPose: return "InvalidPose";
    case ErrorCode::InvalidCamera: return "InvalidCamera";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::UnknownRegion: return "UnknownRegion";
    case ErrorCode::NoVisibleContact: return "NoVisibleContact";
    case ErrorCode::InvalidContactPixel: return "InvalidContactPixel";
    case ErrorCode::BackendError: return "BackendError";
    case ErrorCode::ReasoningParseError: return "ReasoningParseError";
    case ErrorCode::NoFeasibleRotation: return "NoFeasibleRotation";
    case ErrorCode::DegenerateForceAxis: return "DegenerateForceAxis";
    case ErrorCode::DegenerateFrame: return "DegenerateFrame";
    case ErrorCode::EmptyContactTarget: return "EmptyContactTarget";
    case ErrorCode::SimulationDiverged: return "SimulationDiverged";
    case ErrorCode::OptimizationDiverged: return "OptimizationDiverged";
    case ErrorCode::EmptyBatch: return "EmptyBatch";
    case ErrorCode::InputError: return "InputError";
    case ErrorCode::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Unit direction with a checked constructor. Keeps the unit-norm invariant
// out of every call site.
class Direction3 {
 public:
  Direction3() : v_(1, 0, 0) {}
  explicit Direction3(const Vec3& v) {
    double n = v.norm();
    if (n < 1e-12) throw Error(ErrorCode::InputError, "zero-length direction");
    v_ = v / n;
  }
  const Vec3& vec() const { return v_; }
  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }
  Direction3 operator-() const { return Direction3(Vec3(-v_)); }
  double dot(const Vec3& o) const { return v_.dot(o); }
  double dot(const Direction3& o) const { return v_.dot(o.v_); }

 private:
  Vec3 v_;
};

// Deterministic RNG for everything seeded. splitmix64 core keeps sampling
// reproducible across platforms (std::mt19937 distributions are not
// implementation-pinned for doubles).
class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed + 0x9e3779b97f4a7c15ULL) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return double(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform in [0, n).
  size_t next_index(size_t n) { return size_t(next_u64() % uint64_t(n)); }

  Vec3 unit_vector() {
    // Rejection sample a ball point.
    for (;;) {
      Vec3 v(uniform(-1, 1), uniform(-1, 1), uniform(-1, 1));
      double n2 = v.squaredNorm();
      if (n2 > 1e-8 && n2 <= 1.0) return v / std::sqrt(n2);
    }
  }

 private:
  uint64_t state_;
};

inline Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Rodrigues exponential map so(3) -> SO(3).
inline Mat3 exp_so3(const Vec3& w) {
  double t = w.norm();
  if (t < 1e-12) return Mat3::Identity() + skew(w);
  Vec3 a = w / t;
  Mat3 k = skew(a);
  return Mat3::Identity() + std::sin(t) * k + (1.0 - std::cos(t)) * k * k;
}

// Rotation that takes unit vector `from` to unit vector `to`.
inline Mat3 rotation_between(const Vec3& from, const Vec3& to) {
  Quat q = Quat::FromTwoVectors(from, to);
  return q.toRotationMatrix();
}

}  // namespace dexgrasp
