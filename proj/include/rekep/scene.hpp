// World state for planning and simulation.
//
// Scene file schema (JSON):
//   {
//     "keypoints": [[x, y, z], ...],
//     "groups": [[0, 1, 2], [3], ...],              // partition of keypoint indices
//     "obstacles": {
//       "boxes": [{"center": [..], "half_extents": [..], "group": 1}],   // group optional
//       "voxel_file": "occupancy.rkvg"              // optional, RKVG format, must match grid dims
//     },
//     "grid": {"origin": [..], "resolution": 0.02, "dims": [nx, ny, nz], "max_dist": 1.0},  // optional
//     "grasp_candidates": [[[7 numbers], ...], [], ...],   // one list per group
//     "workspace": {"min": [..], "max": [..]},
//     "table_height": 0.0,                          // optional, defaults to workspace min z
//     "events": [{"step": 50, "group": 1, "translation": [..], "rotation_quat": [w, x, y, z],
//                 "detach": false}]
//   }
#pragma once

#include "rekep/dsl.hpp"
#include "rekep/geometry.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rekep {

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ObstacleBox {
  Vec3 center = Vec3::Zero();
  Vec3 half_extents = Vec3::Zero();
  /// Rigid group the box belongs to, if any. Such boxes move with the group
  /// and drop out of the collision map while the group is held.
  std::optional<int> group;
};

struct GridSpec {
  Vec3 origin = Vec3::Zero();
  double resolution = 0.02;
  std::array<int, 3> dims{2, 2, 2};
  double max_dist = 1.0;
};

struct DisturbanceEvent {
  int step = 0;
  int group = 0;
  RigidTransform transform;
  bool detach = false;
};

struct Attachment {
  int group = 0;
  /// Maps world points at grasp time into the end-effector frame.
  RigidTransform world_to_ee;
};

class AttachmentState {
 public:
  explicit AttachmentState(int num_arms = 1) : arms_(static_cast<size_t>(num_arms)) {}

  int num_arms() const { return static_cast<int>(arms_.size()); }
  const std::optional<Attachment>& arm(int a) const { return arms_.at(static_cast<size_t>(a)); }
  std::optional<int> arm_holding(int group) const;
  bool is_attached(int group) const { return arm_holding(group).has_value(); }

  /// Attach `group` to `arm`, releasing it from any other arm first.
  void attach(int arm, int group, const Pose& ee_pose);
  void release_arm(int arm);
  /// Returns the arm that held the group, if any.
  std::optional<int> release_group(int group);

  bool operator==(const AttachmentState& other) const;

 private:
  std::vector<std::optional<Attachment>> arms_;
};

struct Scene {
  KeypointArray keypoints;
  std::vector<std::vector<int>> groups;
  std::vector<int> group_of;
  std::vector<ObstacleBox> boxes;
  std::optional<std::filesystem::path> voxel_file;
  GridSpec grid;
  std::vector<std::vector<Pose>> grasp_candidates;
  WorkspaceBounds workspace;
  double table_height = 0.0;
  std::vector<DisturbanceEvent> events;
  /// Index of the first event not yet applied.
  size_t next_event = 0;
  /// Hex content digest of the source file (empty for scenes built in code).
  std::string content_hash;

  int num_keypoints() const { return static_cast<int>(keypoints.rows()); }
  int num_groups() const { return static_cast<int>(groups.size()); }
};

/// Validates invariants and fills `group_of`. Throws SceneError.
void finalize_scene(Scene& scene);

Scene scene_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
Scene load_scene(const std::filesystem::path& path);

/// 64-bit FNV-1a digest rendered as 16 hex digits.
std::string content_digest(std::string_view bytes);

struct DetachNotice {
  int step = 0;
  int arm = 0;
  int group = 0;
};

struct EventOutcome {
  std::vector<int> applied;  // indices into scene.events
  std::vector<DetachNotice> detached;
  bool obstacles_moved = false;
};

/// Applies every not-yet-applied event whose step is <= t. Calls must use
/// non-decreasing t; repeating a t applies nothing new.
EventOutcome step_events(Scene& scene, int t, AttachmentState& attachment);

/// Candidate of `group` whose position is closest to `grasp_keypoint`; ties go to the lowest index.
Pose select_grasp(const Scene& scene, int group, const Vec3& grasp_keypoint);

/// Rigid forward model: keypoints of groups held by arm a move by arm_deltas[a]; the rest stay put.
KeypointArray forward_model(const KeypointArray& keypoints, const std::vector<std::vector<int>>& groups,
                            const AttachmentState& attachment, std::span<const RigidTransform> arm_deltas);

}  // namespace rekep
