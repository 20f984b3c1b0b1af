// Sub-goal and path problems over end-effector poses.
//
// Decision variables are, per arm, a position inside the workspace and three
// XYZ Euler angles measured relative to a downward-facing reference frame
// (tool z along -world z). The Euler box [-pi/2, pi/2] x [-pi/2, pi/2] x [-pi, pi]
// covers exactly the orientations whose tool z-axis points into the lower
// hemisphere. Everything is normalized to [-1, 1] before reaching the optimizer.
#pragma once

#include "rekep/dsl.hpp"
#include "rekep/esdf.hpp"
#include "rekep/geometry.hpp"
#include "rekep/kinematics.hpp"
#include "rekep/optimizer.hpp"
#include "rekep/scene.hpp"
#include "rekep/task.hpp"

#include <json.hpp>

#include <optional>
#include <vector>

namespace rekep {

struct CostWeights {
  double constraint_violation = 200.0;
  double collision = 5.0;
  double reachability = 1.0;
  double pose_regularization = 0.1;
  double consistency = 1.0;
  double self_collision = 5.0;
  double grasp_metric = 1.0;
  double path_length = 2.0;
  double table_clearance = 5.0;
  double hemisphere = 50.0;

  /// Throws std::invalid_argument if any weight is negative or constraint_violation is not the largest
  /// of the auxiliary weights (the hemisphere guard is excluded from that comparison).
  void validate() const;
};

nlohmann::json to_json(const CostWeights& w);
void update_from_json(CostWeights& w, const nlohmann::json& j);

struct PlannerConstants {
  double collision_threshold = 0.15;
  double self_collision_margin = 0.05;
  double rotation_distance_scale = 0.3;   // meters per radian in pose_distance
  double collision_skip_radius = 0.05;    // no collision cost this close to path start/goal
  double coarse_step_pos = 0.05;          // objective-side dense sampling
  double coarse_step_rot = 10.0 * M_PI / 180.0;
  double waypoint_step_pos = 0.20;        // intermediate-pose count rule
  double waypoint_step_rot = M_PI / 4.0;
  int max_intermediates = 8;
  double dense_step_pos = 0.005;          // executed trajectory resolution
  double dense_step_rot = M_PI / 180.0;
  size_t max_body_points = 30;
  /// Violation value charged when a constraint cannot be evaluated (degenerate geometry).
  double evaluation_failure_violation = 1.0;
};

/// Per-term breakdown; `total()` is the objective value.
struct CostTerms {
  double constraint = 0.0;
  double collision = 0.0;
  double reachability = 0.0;
  double regularization = 0.0;
  double consistency = 0.0;
  double self_collision = 0.0;
  double grasp = 0.0;
  double hemisphere = 0.0;
  double path_length = 0.0;
  double table_clearance = 0.0;

  double total() const {
    return constraint + collision + reachability + regularization + consistency + self_collision + grasp +
           hemisphere + path_length + table_clearance;
  }
};

nlohmann::json to_json(const CostTerms& t);

/// penalty(v) = max(0, v) + max(0, v)^2
inline double violation_penalty(double v) {
  const double p = std::max(0.0, v);
  return p + p * p;
}

double pose_distance(const Pose& a, const Pose& b, double rotation_scale = 0.3);

struct ArmModel {
  const KinematicChain* chain = nullptr;  // reachability is skipped when null
  JointVector q_seed;
  std::vector<Vec3> gripper_points;       // in the end-effector frame
};

std::vector<Vec3> default_gripper_points();

/// Immutable snapshot shared by the sub-goal and path problems of one control iteration.
struct PlanningContext {
  const StageSpec* stage = nullptr;
  KeypointArray keypoints;
  std::vector<std::vector<int>> groups;
  AttachmentState attachment{1};
  const EsdfGrid* esdf = nullptr;          // collision terms are skipped when null
  WorkspaceBounds workspace;
  double table_height = 0.0;
  std::vector<Pose> current;               // e_t per arm
  std::vector<ArmModel> arms;
  std::optional<Pose> grasp_pose;          // selected candidate for the stage's grasp arm
  CostWeights weights;
  PlannerConstants constants;
  IkOptions ik;

  int num_arms() const { return static_cast<int>(current.size()); }

  /// Gripper points plus held-group keypoints, in each arm's end-effector frame, capped by FPS.
  /// Filled by prepare().
  std::vector<std::vector<Vec3>> body_points;
  void prepare();
};

/// Build a context for `stage` from the live scene. Picks the grasp pose via select_grasp when the
/// stage grasps.
PlanningContext make_context(const StageSpec& stage, const Scene& scene, const AttachmentState& attachment,
                             const std::vector<Pose>& current, std::vector<ArmModel> arms, const EsdfGrid* esdf,
                             const CostWeights& weights, const PlannerConstants& constants = {},
                             const IkOptions& ik = {});

/// Per-arm 6-D box: workspace position, downward-hemisphere Euler offsets.
DecisionBox pose_box(const WorkspaceBounds& ws);
Eigen::Matrix<double, 6, 1> encode_pose(const Pose& p);
Pose decode_pose(const Eigen::Matrix<double, 6, 1>& v);

// ---------------------------------------------------------------------------
// Sub-goal problem

struct SubgoalProblem {
  const PlanningContext* ctx = nullptr;
  std::optional<std::vector<Pose>> previous;
  int budget = 0;

  int dimension() const { return 6 * ctx->num_arms(); }
  DecisionBox box() const;
  Eigen::VectorXd encode(const std::vector<Pose>& poses) const;
  std::vector<Pose> decode(const Eigen::VectorXd& x) const;
};

double subgoal_objective(const Eigen::VectorXd& x, const SubgoalProblem& problem, CostTerms* terms = nullptr);

struct SubgoalSolution {
  std::vector<Pose> poses;
  Eigen::VectorXd x;
  SolveReport report;
  CostTerms terms;
};

SubgoalSolution solve_subgoal(const SubgoalProblem& problem, bool first_solve, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Path problem

struct PathProblem {
  const PlanningContext* ctx = nullptr;
  std::vector<Pose> goal;
  /// Coarse dense positions of the previous solution, per arm.
  std::optional<std::vector<std::vector<Vec3>>> previous_dense;
  /// Control poses of the previous solution, per arm. The warm start places the new intermediates
  /// evenly along its unexecuted remainder.
  std::optional<std::vector<std::vector<Pose>>> previous_waypoints;
  int budget = 0;

  const std::vector<Pose>& start() const { return ctx->current; }
  int intermediates() const;
  int dimension() const { return 6 * intermediates() * ctx->num_arms(); }
  /// Control poses per arm: start, decoded intermediates, goal.
  std::vector<std::vector<Pose>> control_poses(const Eigen::VectorXd& x) const;
  Eigen::VectorXd straight_guess() const;
  Eigen::VectorXd warm_start() const;
  Eigen::VectorXd encode(const std::vector<std::vector<Pose>>& intermediates) const;
};

/// P = clamp(ceil(max(dp / 0.20, dtheta / 45deg)) - 1, 0, max_intermediates), max over arms.
int intermediate_count(const std::vector<Pose>& start, const std::vector<Pose>& goal, const PlannerConstants& c);

/// Piecewise-linear samples through the control poses, every <= coarse_step_pos / coarse_step_rot.
/// All arms share the sample count of each segment.
std::vector<std::vector<Pose>> coarse_samples(const std::vector<std::vector<Pose>>& control, const PlannerConstants& c);

double path_objective(const Eigen::VectorXd& x, const PathProblem& problem, CostTerms* terms = nullptr);

struct Trajectory {
  std::vector<std::vector<Pose>> waypoints;   // per arm: start, intermediates, goal
  std::vector<std::vector<Pose>> dense;       // per arm, executed resolution
  std::vector<std::vector<Vec3>> coarse;      // per arm coarse positions, for consistency next time
  Eigen::VectorXd x;                          // normalized intermediates (empty when P = 0)
  int intermediates = 0;

  size_t size() const { return dense.empty() ? 0 : dense.front().size(); }
};

struct PathSolution {
  Trajectory trajectory;
  SolveReport report;
  CostTerms terms;
};

PathSolution plan_path(const PathProblem& problem, bool first_solve, std::uint64_t seed);

/// Centripetal Catmull-Rom through the control positions with piecewise shortest-arc orientation,
/// sampled so consecutive poses are within dense_step_pos / dense_step_rot.
std::vector<std::vector<Pose>> densify(const std::vector<std::vector<Pose>>& control, const PlannerConstants& c);

/// Straight interpolation at dense resolution: ceil(max(dp / 5mm, dtheta / 1deg)) + 1 samples.
std::vector<std::vector<Pose>> straight_dense(const std::vector<Pose>& start, const std::vector<Pose>& goal,
                                              const PlannerConstants& c);

}  // namespace rekep
