// Staged task specifications: per-stage sub-goal / path constraint sets plus
// grasp and release annotations.
//
// File schema (JSON):
//   {
//     "name": "pour",
//     "num_arms": 1,
//     "num_keypoints": 6,                       // optional; enables index checks at load
//     "stages": [
//       { "index": 1,
//         "subgoal_constraints": ["norm(ee[0] - k[3])"],
//         "path_constraints": [],
//         "grasp": {"arm": 0, "keypoint": 3},   // optional
//         "release": {"arm": 0} }               // optional
//     ]
//   }
#pragma once

#include "rekep/dsl.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rekep {

class TaskError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct GraspAnnotation {
  int arm = 0;
  int keypoint = 0;
};

struct StageSpec {
  int index = 1;
  std::vector<dsl::ConstraintExpr> subgoal_constraints;
  std::vector<dsl::ConstraintExpr> path_constraints;
  std::vector<std::string> subgoal_sources;
  std::vector<std::string> path_sources;
  std::optional<GraspAnnotation> grasp;
  std::optional<int> release;
};

struct TaskSpec {
  std::string name;
  int num_arms = 1;
  std::optional<int> num_keypoints;
  std::vector<StageSpec> stages;

  int num_stages() const { return static_cast<int>(stages.size()); }
  /// 1-based access, matching stage numbering.
  const StageSpec& stage(int i) const { return stages.at(static_cast<size_t>(i - 1)); }
};

TaskSpec task_from_json(const nlohmann::json& j);
nlohmann::json task_to_json(const TaskSpec& task);
TaskSpec load_task(const std::filesystem::path& path);

/// Checks every keypoint reference and grasp keypoint against a scene with
/// `num_keypoints` keypoints. Throws TaskError naming the offending stage.
void bind_task(const TaskSpec& task, int num_keypoints);

}  // namespace rekep
