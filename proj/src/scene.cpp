#include "rekep/scene.hpp"

#include "rekep/json_io.hpp"

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace rekep {

using nlohmann::json;

std::optional<int> AttachmentState::arm_holding(int group) const {
  for (size_t a = 0; a < arms_.size(); ++a) {
    if (arms_[a] && arms_[a]->group == group) return static_cast<int>(a);
  }
  return std::nullopt;
}

void AttachmentState::attach(int arm, int group, const Pose& ee_pose) {
  release_group(group);
  arms_.at(static_cast<size_t>(arm)) = Attachment{group, inverse(ee_pose.frame())};
}

void AttachmentState::release_arm(int arm) { arms_.at(static_cast<size_t>(arm)).reset(); }

std::optional<int> AttachmentState::release_group(int group) {
  auto arm = arm_holding(group);
  if (arm) arms_[static_cast<size_t>(*arm)].reset();
  return arm;
}

bool AttachmentState::operator==(const AttachmentState& other) const {
  if (arms_.size() != other.arms_.size()) return false;
  for (size_t a = 0; a < arms_.size(); ++a) {
    if (arms_[a].has_value() != other.arms_[a].has_value()) return false;
    if (arms_[a] && arms_[a]->group != other.arms_[a]->group) return false;
  }
  return true;
}

void finalize_scene(Scene& s) {
  const int k = s.num_keypoints();
  if (k == 0) throw SceneError("scene has no keypoints");
  if (s.groups.empty()) throw SceneError("scene has no rigid groups");
  s.group_of.assign(static_cast<size_t>(k), -1);
  for (size_t g = 0; g < s.groups.size(); ++g) {
    if (s.groups[g].empty()) throw SceneError("group " + std::to_string(g) + " is empty");
    for (int idx : s.groups[g]) {
      if (idx < 0 || idx >= k) {
        throw SceneError("group " + std::to_string(g) + " references keypoint " + std::to_string(idx) +
                         " which does not exist");
      }
      if (s.group_of[static_cast<size_t>(idx)] != -1) {
        throw SceneError("keypoint " + std::to_string(idx) + " belongs to more than one group");
      }
      s.group_of[static_cast<size_t>(idx)] = static_cast<int>(g);
    }
  }
  for (int i = 0; i < k; ++i) {
    if (s.group_of[static_cast<size_t>(i)] == -1) {
      throw SceneError("keypoint " + std::to_string(i) + " belongs to no group");
    }
  }
  if (s.grasp_candidates.size() > s.groups.size()) {
    throw SceneError("more grasp candidate lists than groups");
  }
  s.grasp_candidates.resize(s.groups.size());
  for (size_t g = 0; g < s.grasp_candidates.size(); ++g) {
    for (size_t c = 0; c < s.grasp_candidates[g].size(); ++c) {
      if (!s.workspace.contains(s.grasp_candidates[g][c].position)) {
        throw SceneError("grasp candidate " + std::to_string(c) + " of group " + std::to_string(g) +
                         " lies outside the workspace");
      }
    }
  }
  for (size_t b = 0; b < s.boxes.size(); ++b) {
    const auto& box = s.boxes[b];
    if (!(box.half_extents.array() >= 0.0).all()) {
      throw SceneError("box " + std::to_string(b) + " has negative half extents");
    }
    if (box.group && (*box.group < 0 || *box.group >= s.num_groups())) {
      throw SceneError("box " + std::to_string(b) + " references unknown group");
    }
  }
  if (s.grid.resolution <= 0.0) throw SceneError("grid resolution must be positive");
  for (int d : s.grid.dims) {
    if (d < 2) throw SceneError("grid dims must each be >= 2");
  }
  int last_step = std::numeric_limits<int>::min();
  for (size_t e = 0; e < s.events.size(); ++e) {
    const auto& ev = s.events[e];
    if (ev.step < last_step) throw SceneError("event steps must be non-decreasing in file order");
    last_step = ev.step;
    if (ev.group < 0 || ev.group >= s.num_groups()) {
      throw SceneError("event " + std::to_string(e) + " references unknown group");
    }
  }
}

namespace {

GridSpec default_grid(const WorkspaceBounds& ws) {
  GridSpec g;
  g.resolution = 0.02;
  const Vec3 margin = Vec3::Constant(0.2);
  g.origin = ws.min - margin;
  const Vec3 extent = ws.max - ws.min + 2.0 * margin;
  for (int i = 0; i < 3; ++i) {
    g.dims[static_cast<size_t>(i)] = std::max(2, static_cast<int>(std::ceil(extent[i] / g.resolution)) + 1);
  }
  return g;
}

}  // namespace

Scene scene_from_json(const json& j, const std::filesystem::path& base_dir) {
  Scene s;
  try {
    if (!j.is_object()) throw SceneError("scene must be a JSON object");
    const json& kps = j.at("keypoints");
    if (!kps.is_array()) throw SceneError("keypoints must be an array");
    s.keypoints.resize(static_cast<Eigen::Index>(kps.size()), 3);
    for (size_t i = 0; i < kps.size(); ++i) {
      s.keypoints.row(static_cast<Eigen::Index>(i)) = jsonio::vec3(kps[i], "keypoint").transpose();
    }
    for (const auto& g : j.at("groups")) s.groups.push_back(g.get<std::vector<int>>());

    const json& ws = j.at("workspace");
    s.workspace = WorkspaceBounds(jsonio::vec3(ws.at("min"), "workspace.min"), jsonio::vec3(ws.at("max"), "workspace.max"));
    s.table_height = j.value("table_height", s.workspace.min.z());

    if (j.contains("obstacles")) {
      const json& ob = j.at("obstacles");
      for (const auto& b : ob.value("boxes", json::array())) {
        ObstacleBox box;
        box.center = jsonio::vec3(b.at("center"), "box center");
        box.half_extents = jsonio::vec3(b.at("half_extents"), "box half_extents");
        if (b.contains("group") && !b.at("group").is_null()) box.group = b.at("group").get<int>();
        s.boxes.push_back(box);
      }
      if (ob.contains("voxel_file") && !ob.at("voxel_file").is_null()) {
        std::filesystem::path p = ob.at("voxel_file").get<std::string>();
        s.voxel_file = p.is_relative() ? base_dir / p : p;
      }
    }

    s.grid = default_grid(s.workspace);
    if (j.contains("grid")) {
      const json& g = j.at("grid");
      s.grid.origin = jsonio::vec3(g.at("origin"), "grid.origin");
      s.grid.resolution = g.at("resolution").get<double>();
      s.grid.dims = g.at("dims").get<std::array<int, 3>>();
      s.grid.max_dist = g.value("max_dist", 1.0);
    }

    if (j.contains("grasp_candidates")) {
      for (const auto& list : j.at("grasp_candidates")) {
        std::vector<Pose> poses;
        for (const auto& p : list) poses.push_back(jsonio::pose(p, "grasp candidate"));
        s.grasp_candidates.push_back(std::move(poses));
      }
    }

    for (const auto& e : j.value("events", json::array())) {
      DisturbanceEvent ev;
      ev.step = e.at("step").get<int>();
      ev.group = e.at("group").get<int>();
      const Vec3 t = e.contains("translation") ? jsonio::vec3(e.at("translation"), "event translation") : Vec3::Zero();
      const Quat q = e.contains("rotation_quat") ? jsonio::quat(e.at("rotation_quat"), "event rotation_quat")
                                                 : Quat::Identity();
      ev.transform = RigidTransform(q, t);
      ev.detach = e.value("detach", false);
      s.events.push_back(ev);
    }
  } catch (const json::exception& e) {
    throw SceneError(std::string("scene schema: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw SceneError(std::string("scene schema: ") + e.what());
  }
  finalize_scene(s);
  return s;
}

std::string content_digest(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SceneError("cannot open scene file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SceneError("scene file " + path.string() + ": " + e.what());
  }
  Scene s = scene_from_json(j, path.parent_path());
  s.content_hash = content_digest(text);
  return s;
}

EventOutcome step_events(Scene& scene, int t, AttachmentState& attachment) {
  EventOutcome out;
  while (scene.next_event < scene.events.size() && scene.events[scene.next_event].step <= t) {
    const size_t idx = scene.next_event++;
    const DisturbanceEvent& ev = scene.events[idx];
    for (int k : scene.groups[static_cast<size_t>(ev.group)]) {
      const Vec3 p = scene.keypoints.row(k).transpose();
      scene.keypoints.row(k) = apply(ev.transform, p).transpose();
    }
    for (Pose& g : scene.grasp_candidates[static_cast<size_t>(ev.group)]) {
      g = Pose::FromFrame(compose(ev.transform, g.frame()));
    }
    for (ObstacleBox& box : scene.boxes) {
      if (box.group == ev.group) {
        box.center = apply(ev.transform, box.center);
        out.obstacles_moved = true;
      }
    }
    if (ev.detach) {
      if (auto arm = attachment.release_group(ev.group)) {
        out.detached.push_back({t, *arm, ev.group});
        out.obstacles_moved = true;
      }
    }
    out.applied.push_back(static_cast<int>(idx));
  }
  return out;
}

Pose select_grasp(const Scene& scene, int group, const Vec3& grasp_keypoint) {
  if (group < 0 || group >= scene.num_groups() || scene.grasp_candidates[static_cast<size_t>(group)].empty()) {
    throw SceneError("no grasp candidates for group " + std::to_string(group));
  }
  const auto& cands = scene.grasp_candidates[static_cast<size_t>(group)];
  size_t best = 0;
  double best_d = (cands[0].position - grasp_keypoint).norm();
  for (size_t c = 1; c < cands.size(); ++c) {
    const double d = (cands[c].position - grasp_keypoint).norm();
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return cands[best];
}

KeypointArray forward_model(const KeypointArray& keypoints, const std::vector<std::vector<int>>& groups,
                            const AttachmentState& attachment, std::span<const RigidTransform> arm_deltas) {
  KeypointArray out = keypoints;
  const int arms = std::min(attachment.num_arms(), static_cast<int>(arm_deltas.size()));
  for (int a = 0; a < arms; ++a) {
    const auto& att = attachment.arm(a);
    if (!att) continue;
    const RigidTransform& d = arm_deltas[static_cast<size_t>(a)];
    for (int k : groups.at(static_cast<size_t>(att->group))) {
      const Vec3 p = keypoints.row(k).transpose();
      out.row(k) = apply(d, p).transpose();
    }
  }
  return out;
}

}  // namespace rekep
