// Closed-loop stage controller with a kinematic simulator.
//
// Each control iteration: backtrack while the current stage's path constraints
// are violated, advance when the end-effector has reached the last sub-goal,
// otherwise re-solve the sub-goal and path and execute the next m dense poses.
#pragma once

#include "rekep/esdf.hpp"
#include "rekep/kinematics.hpp"
#include "rekep/planner.hpp"
#include "rekep/scene.hpp"
#include "rekep/task.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rekep {

struct SolverBudgets {
  int subgoal_first = 6000;
  int subgoal_refine = 2000;
  int path_first = 8000;
  int path_refine = 5000;
};

struct ExecutorParams {
  double epsilon_pos = 0.01;
  double epsilon_rot = 3.0 * std::numbers::pi / 180.0;
  int actions_per_iter = 2;
  double control_hz = 20.0;
  int max_steps = 1500;
  double violation_slack = 1e-4;
  SolverBudgets budgets;
  std::uint64_t seed = 0;
  /// Also backtrack when the previous stage's sub-goal constraints stop holding.
  bool recheck_subgoals = false;
  CostWeights weights;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
};

nlohmann::json to_json(const ExecutorParams& p);
/// Overwrites the fields present in `j`; unknown keys are rejected.
void update_from_json(ExecutorParams& p, const nlohmann::json& j);

/// Largest j <= i whose path constraints all evaluate <= slack; 1 if none qualifies. With
/// `recheck_subgoals`, stage j also requires the sub-goal constraints of stage j - 1 to hold.
int check_backtrack(const TaskSpec& task, int i, const KeypointArray& keypoints, std::span<const Vec3> ee,
                    double slack, bool recheck_subgoals = false);

/// Kinematic stand-in for the robot and the world it manipulates.
struct SimState {
  Scene scene;
  AttachmentState attachment{1};
  std::vector<Pose> ee;
  std::vector<JointVector> q;
  int step = 0;

  SimState() = default;
  /// End-effectors start at fk(chain, initial_q) (zero configuration if absent).
  SimState(Scene s, const std::vector<const KinematicChain*>& chains);
};

struct ActionReport {
  int executed = 0;
  std::vector<int> steps;                       // step index reached after each action
  std::vector<std::vector<int>> events;         // per action: indices of scene events applied
  std::vector<std::vector<DetachNotice>> detached;
  bool obstacles_moved = false;
};

using StepCallback = std::function<void(const SimState&, const EventOutcome&)>;

/// Moves the end-effectors through dense[1 ... m] (clamped to the end), applying the rigid forward
/// model to held groups and scripted events after every step. When nothing is left to execute the
/// robot holds still for one step, so time always advances. `on_step` sees the state after each step.
ActionReport execute_actions(SimState& sim, const Trajectory& trajectory, int m,
                             const std::vector<const KinematicChain*>& chains, const IkOptions& ik = {},
                             const StepCallback& on_step = {});

/// Distance field over the scene's boxes (and voxel file), minus boxes of excluded groups.
/// Rebuilt only when the exclusion set changes or obstacles move.
class CollisionMap {
 public:
  explicit CollisionMap(const Scene& scene);

  const EsdfGrid* update(const Scene& scene, const std::vector<int>& excluded_groups, bool obstacles_moved);
  int rebuilds() const { return rebuilds_; }

 private:
  Occupancy voxels_;
  bool has_voxels_ = false;
  std::optional<EsdfGrid> grid_;
  std::optional<std::vector<int>> key_;
  int rebuilds_ = 0;
};

struct ExecutionLog {
  nlohmann::json header;
  std::vector<nlohmann::json> records;
  nlohmann::json footer;

  std::string outcome;  // success | timeout | error
  int steps = 0;
  int backtracks = 0;
  /// Wall-clock seconds spent solving per control iteration. Not serialized.
  std::vector<double> planning_seconds;

  /// Header, one record per control step, footer; one JSON object per line.
  std::string to_jsonl() const;
};

struct RunInputs {
  const TaskSpec* task = nullptr;
  Scene scene;
  std::vector<const KinematicChain*> chains;  // one per arm
  ExecutorParams params;
  std::string timestamp;                       // copied into the header only
};

ExecutionLog run(const RunInputs& inputs);

}  // namespace rekep
