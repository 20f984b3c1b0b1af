// Small JSON conversion helpers for vectors, quaternions and poses.
#pragma once

#include "rekep/geometry.hpp"

#include <json.hpp>

#include <stdexcept>
#include <string>

namespace rekep::jsonio {

inline void require_numbers(const nlohmann::json& j, size_t n, const char* what) {
  if (!j.is_array() || j.size() != n) {
    throw std::invalid_argument(std::string(what) + " must be an array of " + std::to_string(n) + " numbers");
  }
  for (const auto& v : j) {
    if (!v.is_number()) throw std::invalid_argument(std::string(what) + " must contain only numbers");
  }
}

inline Vec3 vec3(const nlohmann::json& j, const char* what = "3-vector") {
  require_numbers(j, 3, what);
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline nlohmann::json to_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

/// Quaternion given as [w, x, y, z].
inline Quat quat(const nlohmann::json& j, const char* what = "quaternion") {
  require_numbers(j, 4, what);
  Quat q(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
  if (q.norm() < 1e-12) throw std::invalid_argument(std::string(what) + " has zero norm");
  return q.normalized();
}

/// Pose given as [px, py, pz, qw, qx, qy, qz].
inline Pose pose(const nlohmann::json& j, const char* what = "pose") {
  require_numbers(j, 7, what);
  std::array<double, 7> a{};
  for (size_t i = 0; i < 7; ++i) a[i] = j[i].get<double>();
  if (Quat(a[3], a[4], a[5], a[6]).norm() < 1e-12) {
    throw std::invalid_argument(std::string(what) + " has a zero quaternion");
  }
  return Pose::FromArray(a);
}

inline nlohmann::json to_json(const Pose& p) {
  const auto a = p.to_array();
  return nlohmann::json(std::vector<double>(a.begin(), a.end()));
}

inline RigidTransform transform(const nlohmann::json& j, const char* what = "transform") {
  const Pose p = pose(j, what);
  return p.frame();
}

}  // namespace rekep::jsonio
