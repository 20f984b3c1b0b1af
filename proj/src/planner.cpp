#include "rekep/planner.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace rekep {

namespace {

const Quat& downward_reference() {
  static const Quat q(Eigen::AngleAxisd(std::numbers::pi, Vec3::UnitX()));
  return q;
}

double ceil_count(double x) { return std::ceil(x - 1e-9); }

double safe_evaluate(const dsl::ConstraintExpr& f, const KeypointArray& k, std::span<const Vec3> ee,
                     double fallback) {
  try {
    return f.evaluate(k, ee);
  } catch (const dsl::EvalError&) {
    return fallback;
  }
}

void transform_points(const Pose& pose, const std::vector<Vec3>& local, std::vector<Vec3>& out) {
  out.resize(local.size());
  const Eigen::Matrix3d r = pose.orientation.toRotationMatrix();
  for (size_t i = 0; i < local.size(); ++i) out[i] = r * local[i] + pose.position;
}

double self_collision(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double margin) {
  double sum = 0.0;
  for (const auto& p : a) {
    for (const auto& q : b) sum += std::max(0.0, margin - (p - q).norm());
  }
  return sum;
}

double set_distance(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) return 0.0;
  auto directed = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) best = std::min(best, (p - q).squaredNorm());
      sum += std::sqrt(best);
    }
    return sum / static_cast<double>(from.size());
  };
  return 0.5 * (directed(a, b) + directed(b, a));
}

double hemisphere_violation(const Pose& p) {
  return std::max(0.0, (p.orientation * Vec3::UnitZ()).z());
}

}  // namespace

void CostWeights::validate() const {
  const std::array<double, 8> aux{collision,    reachability,   pose_regularization, consistency,
                                  self_collision, grasp_metric, path_length,         table_clearance};
  if (constraint_violation < 0.0 || hemisphere < 0.0) throw std::invalid_argument("cost weights must be >= 0");
  for (double w : aux) {
    if (w < 0.0) throw std::invalid_argument("cost weights must be >= 0");
    if (!(w < constraint_violation)) {
      throw std::invalid_argument("constraint_violation must be the largest cost weight");
    }
  }
}

nlohmann::json to_json(const CostWeights& w) {
  return {{"constraint_violation", w.constraint_violation},
          {"collision", w.collision},
          {"reachability", w.reachability},
          {"pose_regularization", w.pose_regularization},
          {"consistency", w.consistency},
          {"self_collision", w.self_collision},
          {"grasp_metric", w.grasp_metric},
          {"path_length", w.path_length},
          {"table_clearance", w.table_clearance},
          {"hemisphere", w.hemisphere}};
}

void update_from_json(CostWeights& w, const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("weights must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!value.is_number()) throw std::invalid_argument("weight '" + key + "' must be a number");
    const double v = value.get<double>();
    if (key == "constraint_violation") w.constraint_violation = v;
    else if (key == "collision") w.collision = v;
    else if (key == "reachability") w.reachability = v;
    else if (key == "pose_regularization") w.pose_regularization = v;
    else if (key == "consistency") w.consistency = v;
    else if (key == "self_collision") w.self_collision = v;
    else if (key == "grasp_metric") w.grasp_metric = v;
    else if (key == "path_length") w.path_length = v;
    else if (key == "table_clearance") w.table_clearance = v;
    else if (key == "hemisphere") w.hemisphere = v;
    else throw std::invalid_argument("unknown weight '" + key + "'");
  }
}

nlohmann::json to_json(const CostTerms& t) {
  return {{"constraint", t.constraint},         {"collision", t.collision},
          {"reachability", t.reachability},     {"regularization", t.regularization},
          {"consistency", t.consistency},       {"self_collision", t.self_collision},
          {"grasp", t.grasp},                   {"hemisphere", t.hemisphere},
          {"path_length", t.path_length},       {"table_clearance", t.table_clearance},
          {"total", t.total()}};
}

double pose_distance(const Pose& a, const Pose& b, double rotation_scale) {
  return (a.position - b.position).norm() + rotation_scale * rotation_angle(a.orientation, b.orientation);
}

std::vector<Vec3> default_gripper_points() {
  // Tool frame: z points out of the fingers, fingers open along y.
  return {Vec3(0.0, 0.04, 0.0),    Vec3(0.0, -0.04, 0.0),  Vec3(0.0, 0.04, -0.05), Vec3(0.0, -0.04, -0.05),
          Vec3(0.0, 0.0, -0.06),   Vec3(0.0, 0.06, -0.07), Vec3(0.0, -0.06, -0.07), Vec3(0.0, 0.0, -0.12)};
}

void PlanningContext::prepare() {
  body_points.assign(current.size(), {});
  for (size_t a = 0; a < current.size(); ++a) {
    std::vector<Vec3> pts = a < arms.size() ? arms[a].gripper_points : std::vector<Vec3>{};
    if (const auto& att = attachment.arm(static_cast<int>(a))) {
      const RigidTransform to_ee = inverse(current[a].frame());
      for (int idx : groups.at(static_cast<size_t>(att->group))) {
        pts.push_back(apply(to_ee, keypoints.row(idx).transpose()));
      }
    }
    if (pts.size() > constants.max_body_points) pts = farthest_point_sample(pts, constants.max_body_points);
    body_points[a] = std::move(pts);
  }
}

PlanningContext make_context(const StageSpec& stage, const Scene& scene, const AttachmentState& attachment,
                             const std::vector<Pose>& current, std::vector<ArmModel> arms, const EsdfGrid* esdf,
                             const CostWeights& weights, const PlannerConstants& constants, const IkOptions& ik) {
  PlanningContext ctx;
  ctx.stage = &stage;
  ctx.keypoints = scene.keypoints;
  ctx.groups = scene.groups;
  ctx.attachment = attachment;
  ctx.esdf = esdf;
  ctx.workspace = scene.workspace;
  ctx.table_height = scene.table_height;
  ctx.current = current;
  ctx.arms = std::move(arms);
  ctx.weights = weights;
  ctx.constants = constants;
  ctx.ik = ik;
  if (stage.grasp) {
    const int kp = stage.grasp->keypoint;
    const int group = scene.group_of.at(static_cast<size_t>(kp));
    if (!scene.grasp_candidates.at(static_cast<size_t>(group)).empty()) {
      ctx.grasp_pose = select_grasp(scene, group, scene.keypoints.row(kp).transpose());
    }
  }
  ctx.prepare();
  return ctx;
}

DecisionBox pose_box(const WorkspaceBounds& ws) {
  constexpr double half_pi = std::numbers::pi / 2.0;
  Eigen::VectorXd lo(6), hi(6);
  lo << ws.min, -half_pi, -half_pi, -std::numbers::pi;
  hi << ws.max, half_pi, half_pi, std::numbers::pi;
  return {lo, hi};
}

Eigen::Matrix<double, 6, 1> encode_pose(const Pose& p) {
  Eigen::Matrix<double, 6, 1> v;
  v.head<3>() = p.position;
  v.tail<3>() = euler_xyz_from_quat(Quat(downward_reference().conjugate() * p.orientation));
  return v;
}

Pose decode_pose(const Eigen::Matrix<double, 6, 1>& v) {
  return {v.head<3>(), downward_reference() * quat_from_euler_xyz<double>(v.tail<3>())};
}

// ---------------------------------------------------------------------------

DecisionBox SubgoalProblem::box() const {
  DecisionBox b = pose_box(ctx->workspace);
  for (int a = 1; a < ctx->num_arms(); ++a) b = stack(b, pose_box(ctx->workspace));
  return b;
}

Eigen::VectorXd SubgoalProblem::encode(const std::vector<Pose>& poses) const {
  Eigen::VectorXd raw(dimension());
  for (int a = 0; a < ctx->num_arms(); ++a) raw.segment<6>(6 * a) = encode_pose(poses.at(static_cast<size_t>(a)));
  return box().normalize(raw).cwiseMax(-1.0).cwiseMin(1.0);
}

std::vector<Pose> SubgoalProblem::decode(const Eigen::VectorXd& x) const {
  const Eigen::VectorXd raw = box().denormalize(x);
  std::vector<Pose> out;
  out.reserve(static_cast<size_t>(ctx->num_arms()));
  for (int a = 0; a < ctx->num_arms(); ++a) out.push_back(decode_pose(raw.segment<6>(6 * a)));
  return out;
}

double subgoal_objective(const Eigen::VectorXd& x, const SubgoalProblem& problem, CostTerms* terms) {
  const PlanningContext& c = *problem.ctx;
  const CostWeights& w = c.weights;
  const PlannerConstants& k = c.constants;
  const int arms = c.num_arms();
  const std::vector<Pose> poses = problem.decode(x);

  CostTerms t;
  std::vector<RigidTransform> deltas;
  std::array<Vec3, 2> ee;
  for (int a = 0; a < arms; ++a) {
    deltas.push_back(delta_transform(c.current[static_cast<size_t>(a)], poses[static_cast<size_t>(a)]));
    ee[static_cast<size_t>(a)] = poses[static_cast<size_t>(a)].position;
  }
  const KeypointArray moved = forward_model(c.keypoints, c.groups, c.attachment, deltas);
  const std::span<const Vec3> ee_span(ee.data(), static_cast<size_t>(arms));
  for (const auto& f : c.stage->subgoal_constraints) {
    t.constraint += w.constraint_violation *
                    violation_penalty(safe_evaluate(f, moved, ee_span, k.evaluation_failure_violation));
  }

  std::array<std::vector<Vec3>, 2> body;
  for (int a = 0; a < arms; ++a) {
    const auto au = static_cast<size_t>(a);
    const Pose& e = poses[au];
    transform_points(e, c.body_points[au], body[au]);
    if (c.esdf) t.collision += w.collision * collision_cost(*c.esdf, body[au], k.collision_threshold);
    if (au < c.arms.size() && c.arms[au].chain) {
      t.reachability += w.reachability * reachability_cost(*c.arms[au].chain, e, c.arms[au].q_seed, c.ik);
    }
    t.regularization += w.pose_regularization * pose_distance(e, c.current[au], k.rotation_distance_scale);
    if (problem.previous) {
      t.consistency += w.consistency * pose_distance(e, problem.previous->at(au), k.rotation_distance_scale);
    }
    t.hemisphere += w.hemisphere * hemisphere_violation(e);
  }
  if (arms == 2) t.self_collision = w.self_collision * self_collision(body[0], body[1], k.self_collision_margin);
  if (c.stage->grasp && c.grasp_pose) {
    const Pose& e = poses.at(static_cast<size_t>(c.stage->grasp->arm));
    t.grasp = w.grasp_metric * ((e.position - c.grasp_pose->position).norm() +
                                rotation_angle(e.orientation, c.grasp_pose->orientation));
  }
  if (terms) *terms = t;
  return t.total();
}

SubgoalSolution solve_subgoal(const SubgoalProblem& problem, bool first_solve, std::uint64_t seed) {
  Objective obj([&problem](const Eigen::VectorXd& x) { return subgoal_objective(x, problem); });
  const Eigen::VectorXd from_current = problem.encode(problem.ctx->current);
  SolveReport report;
  if (first_solve) {
    report = global_solve(obj, problem.dimension(), problem.budget, seed, from_current);
  } else {
    report = local_refine(obj, problem.previous ? problem.encode(*problem.previous) : from_current, problem.budget);
  }
  if (report.x_best.size() == 0) report.x_best = from_current;
  SubgoalSolution out;
  out.x = report.x_best;
  out.poses = problem.decode(out.x);
  subgoal_objective(out.x, problem, &out.terms);
  if (!std::isfinite(report.f_best)) report.f_best = out.terms.total();
  out.report = std::move(report);
  return out;
}

// ---------------------------------------------------------------------------

int intermediate_count(const std::vector<Pose>& start, const std::vector<Pose>& goal, const PlannerConstants& c) {
  double need = 0.0;
  for (size_t a = 0; a < start.size(); ++a) {
    const double dp = (goal[a].position - start[a].position).norm();
    const double dr = rotation_angle(start[a].orientation, goal[a].orientation);
    need = std::max({need, dp / c.waypoint_step_pos, dr / c.waypoint_step_rot});
  }
  return std::clamp(static_cast<int>(ceil_count(need)) - 1, 0, c.max_intermediates);
}

int PathProblem::intermediates() const { return intermediate_count(start(), goal, ctx->constants); }

std::vector<std::vector<Pose>> PathProblem::control_poses(const Eigen::VectorXd& x) const {
  const int p = intermediates();
  const int arms = ctx->num_arms();
  const DecisionBox b = pose_box(ctx->workspace);
  std::vector<std::vector<Pose>> out(static_cast<size_t>(arms));
  for (int a = 0; a < arms; ++a) {
    auto& seq = out[static_cast<size_t>(a)];
    seq.reserve(static_cast<size_t>(p + 2));
    seq.push_back(start()[static_cast<size_t>(a)]);
    for (int i = 0; i < p; ++i) {
      const Eigen::Matrix<double, 6, 1> raw = b.denormalize(x.segment<6>(6 * (a * p + i)));
      seq.push_back(decode_pose(raw));
    }
    seq.push_back(goal[static_cast<size_t>(a)]);
  }
  return out;
}

Eigen::VectorXd PathProblem::encode(const std::vector<std::vector<Pose>>& intermediates) const {
  const int p = intermediates.empty() ? 0 : static_cast<int>(intermediates[0].size());
  const DecisionBox b = pose_box(ctx->workspace);
  Eigen::VectorXd x(6 * p * static_cast<int>(intermediates.size()));
  for (size_t a = 0; a < intermediates.size(); ++a) {
    for (int i = 0; i < p; ++i) {
      x.segment<6>(6 * (static_cast<int>(a) * p + i)) =
          b.normalize(encode_pose(intermediates[a][static_cast<size_t>(i)])).cwiseMax(-1.0).cwiseMin(1.0);
    }
  }
  return x;
}

Eigen::VectorXd PathProblem::straight_guess() const {
  const int p = intermediates();
  std::vector<std::vector<Pose>> mids(static_cast<size_t>(ctx->num_arms()));
  for (size_t a = 0; a < mids.size(); ++a) {
    for (int i = 0; i < p; ++i) {
      mids[a].push_back(interpolate(start()[a], goal[a], static_cast<double>(i + 1) / (p + 1)));
    }
  }
  return encode(mids);
}

Eigen::VectorXd PathProblem::warm_start() const {
  const int p = intermediates();
  if (!previous_waypoints || p == 0) return straight_guess();
  const double rs = ctx->constants.rotation_distance_scale;
  std::vector<std::vector<Pose>> mids(static_cast<size_t>(ctx->num_arms()));
  for (size_t a = 0; a < mids.size(); ++a) {
    const auto& prev = previous_waypoints->at(a);
    if (prev.size() < 2) return straight_guess();
    // Segment of the previous control polyline closest to where the arm is now.
    size_t seg = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t j = 0; j + 1 < prev.size(); ++j) {
      const Vec3 d = prev[j + 1].position - prev[j].position;
      const double len2 = d.squaredNorm();
      const double u = len2 > 0.0 ? std::clamp((start()[a].position - prev[j].position).dot(d) / len2, 0.0, 1.0) : 0.0;
      const double dist = (prev[j].position + u * d - start()[a].position).norm();
      if (dist < best) {
        best = dist;
        seg = j;
      }
    }
    std::vector<Pose> poly{start()[a]};
    for (size_t j = seg + 1; j + 1 < prev.size(); ++j) poly.push_back(prev[j]);
    poly.push_back(goal[a]);

    std::vector<double> cum{0.0};
    for (size_t j = 1; j < poly.size(); ++j) cum.push_back(cum.back() + pose_distance(poly[j - 1], poly[j], rs));
    const double total = cum.back();
    for (int i = 0; i < p; ++i) {
      const double target = total * (i + 1) / (p + 1);
      size_t j = 1;
      while (j + 1 < cum.size() && cum[j] < target) ++j;
      const double len = cum[j] - cum[j - 1];
      const double u = len > 0.0 ? std::clamp((target - cum[j - 1]) / len, 0.0, 1.0) : 0.0;
      mids[a].push_back(interpolate(poly[j - 1], poly[j], u));
    }
  }
  return encode(mids);
}

std::vector<std::vector<Pose>> coarse_samples(const std::vector<std::vector<Pose>>& control,
                                              const PlannerConstants& c) {
  const size_t arms = control.size();
  std::vector<std::vector<Pose>> out(arms);
  if (arms == 0) return out;
  const size_t segments = control[0].size() - 1;
  for (size_t s = 0; s < segments; ++s) {
    double need = 1.0;
    for (size_t a = 0; a < arms; ++a) {
      const Pose& p0 = control[a][s];
      const Pose& p1 = control[a][s + 1];
      need = std::max({need, ceil_count((p1.position - p0.position).norm() / c.coarse_step_pos),
                       ceil_count(rotation_angle(p0.orientation, p1.orientation) / c.coarse_step_rot)});
    }
    const int n = static_cast<int>(need);
    for (size_t a = 0; a < arms; ++a) {
      for (int j = 0; j < n; ++j) {
        out[a].push_back(interpolate(control[a][s], control[a][s + 1], static_cast<double>(j) / n));
      }
    }
  }
  for (size_t a = 0; a < arms; ++a) out[a].push_back(control[a].back());
  return out;
}

double path_objective(const Eigen::VectorXd& x, const PathProblem& problem, CostTerms* terms) {
  const PlanningContext& c = *problem.ctx;
  const CostWeights& w = c.weights;
  const PlannerConstants& k = c.constants;
  const int arms = c.num_arms();
  const auto control = problem.control_poses(x);
  const auto samples = coarse_samples(control, k);
  const size_t count = samples[0].size();

  CostTerms t;
  std::vector<RigidTransform> deltas(static_cast<size_t>(arms));
  std::array<Vec3, 2> ee;
  std::array<std::vector<Vec3>, 2> body;
  const std::span<const Vec3> ee_span(ee.data(), static_cast<size_t>(arms));
  const bool has_path_constraints = !c.stage->path_constraints.empty();

  for (size_t s = 0; s < count; ++s) {
    for (int a = 0; a < arms; ++a) {
      const auto au = static_cast<size_t>(a);
      const Pose& e = samples[au][s];
      ee[au] = e.position;
      if (has_path_constraints) deltas[au] = delta_transform(c.current[au], e);
      t.table_clearance += w.table_clearance * std::max(0.0, c.table_height - e.position.z());
      if (s > 0) t.path_length += w.path_length * pose_distance(samples[au][s - 1], e, k.rotation_distance_scale);
      const bool near_ends = (e.position - control[au].front().position).norm() < k.collision_skip_radius ||
                             (e.position - control[au].back().position).norm() < k.collision_skip_radius;
      if ((c.esdf && !near_ends) || arms == 2) transform_points(e, c.body_points[au], body[au]);
      if (c.esdf && !near_ends) t.collision += w.collision * collision_cost(*c.esdf, body[au], k.collision_threshold);
    }
    if (has_path_constraints) {
      const KeypointArray moved = forward_model(c.keypoints, c.groups, c.attachment, deltas);
      for (const auto& f : c.stage->path_constraints) {
        t.constraint += w.constraint_violation *
                        violation_penalty(safe_evaluate(f, moved, ee_span, k.evaluation_failure_violation));
      }
    }
    if (arms == 2) t.self_collision += w.self_collision * self_collision(body[0], body[1], k.self_collision_margin);
  }

  for (int a = 0; a < arms; ++a) {
    const auto au = static_cast<size_t>(a);
    for (size_t i = 1; i + 1 < control[au].size(); ++i) {
      const Pose& e = control[au][i];
      if (au < c.arms.size() && c.arms[au].chain) {
        t.reachability += w.reachability * reachability_cost(*c.arms[au].chain, e, c.arms[au].q_seed, c.ik);
      }
      t.hemisphere += w.hemisphere * hemisphere_violation(e);
    }
    if (problem.previous_dense) {
      std::vector<Vec3> pts;
      pts.reserve(count);
      for (const auto& p : samples[au]) pts.push_back(p.position);
      t.consistency += w.consistency * set_distance(pts, problem.previous_dense->at(au));
    }
  }
  if (terms) *terms = t;
  return t.total();
}

// ---------------------------------------------------------------------------

std::vector<std::vector<Pose>> straight_dense(const std::vector<Pose>& start, const std::vector<Pose>& goal,
                                              const PlannerConstants& c) {
  double need = 0.0;
  for (size_t a = 0; a < start.size(); ++a) {
    need = std::max({need, ceil_count((goal[a].position - start[a].position).norm() / c.dense_step_pos),
                     ceil_count(rotation_angle(start[a].orientation, goal[a].orientation) / c.dense_step_rot)});
  }
  const int n = static_cast<int>(need);
  std::vector<std::vector<Pose>> out(start.size());
  for (size_t a = 0; a < start.size(); ++a) {
    out[a].reserve(static_cast<size_t>(n + 1));
    for (int j = 0; j < n; ++j) out[a].push_back(interpolate(start[a], goal[a], static_cast<double>(j) / n));
    out[a].push_back(goal[a]);
  }
  return out;
}

namespace {

// Centripetal Catmull-Rom segment between p1 and p2 (Barry-Goldman evaluation).
struct CatmullRomSegment {
  Vec3 p0, p1, p2, p3;
  double t0 = 0, t1 = 0, t2 = 0, t3 = 0;

  CatmullRomSegment(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) : p0(a), p1(b), p2(c), p3(d) {
    auto knot = [](const Vec3& u, const Vec3& v) { return std::max(std::sqrt((v - u).norm()), 1e-6); };
    t1 = t0 + knot(p0, p1);
    t2 = t1 + knot(p1, p2);
    t3 = t2 + knot(p2, p3);
  }

  Vec3 at(double u) const {
    if (u <= 0.0) return p1;
    if (u >= 1.0) return p2;
    const double t = t1 + u * (t2 - t1);
    const Vec3 a1 = (t1 - t) / (t1 - t0) * p0 + (t - t0) / (t1 - t0) * p1;
    const Vec3 a2 = (t2 - t) / (t2 - t1) * p1 + (t - t1) / (t2 - t1) * p2;
    const Vec3 a3 = (t3 - t) / (t3 - t2) * p2 + (t - t2) / (t3 - t2) * p3;
    const Vec3 b1 = (t2 - t) / (t2 - t0) * a1 + (t - t0) / (t2 - t0) * a2;
    const Vec3 b2 = (t3 - t) / (t3 - t1) * a2 + (t - t1) / (t3 - t1) * a3;
    return (t2 - t) / (t2 - t1) * b1 + (t - t1) / (t2 - t1) * b2;
  }
};

}  // namespace

std::vector<std::vector<Pose>> densify(const std::vector<std::vector<Pose>>& control, const PlannerConstants& c) {
  const size_t arms = control.size();
  std::vector<std::vector<Pose>> out(arms);
  if (arms == 0) return out;
  const size_t n_ctrl = control[0].size();
  const size_t segments = n_ctrl - 1;

  for (size_t s = 0; s < segments; ++s) {
    std::vector<CatmullRomSegment> curves;
    double need = 1.0;
    for (size_t a = 0; a < arms; ++a) {
      const auto& cp = control[a];
      const Vec3& p1 = cp[s].position;
      const Vec3& p2 = cp[s + 1].position;
      const Vec3 p0 = s > 0 ? cp[s - 1].position : Vec3(2.0 * p1 - p2);
      const Vec3 p3 = s + 2 < n_ctrl ? cp[s + 2].position : Vec3(2.0 * p2 - p1);
      curves.emplace_back(p0, p1, p2, p3);
      need = std::max({need, ceil_count((p2 - p1).norm() / c.dense_step_pos),
                       ceil_count(rotation_angle(cp[s].orientation, cp[s + 1].orientation) / c.dense_step_rot)});
    }
    int n = static_cast<int>(need);
    std::vector<std::vector<Pose>> seg(arms);
    for (int attempt = 0;; ++attempt) {
      bool ok = true;
      for (size_t a = 0; a < arms; ++a) {
        seg[a].clear();
        for (int j = 0; j <= n; ++j) {
          const double u = static_cast<double>(j) / n;
          const Pose& q0 = control[a][s];
          const Pose& q1 = control[a][s + 1];
          Pose p = j == 0 ? q0 : j == n ? q1 : Pose(curves[a].at(u), q0.orientation.slerp(u, q1.orientation));
          if (j > 0) {
            const Pose& prev = seg[a].back();
            if ((p.position - prev.position).norm() > c.dense_step_pos + 1e-12 ||
                rotation_angle(prev.orientation, p.orientation) > c.dense_step_rot + 1e-12) {
              ok = false;
            }
          }
          seg[a].push_back(p);
        }
      }
      if (ok || attempt > 40) break;
      n = static_cast<int>(std::ceil(n * 1.25)) + 1;
    }
    for (size_t a = 0; a < arms; ++a) out[a].insert(out[a].end(), seg[a].begin(), seg[a].end() - 1);
  }
  for (size_t a = 0; a < arms; ++a) out[a].push_back(control[a].back());
  return out;
}

PathSolution plan_path(const PathProblem& problem, bool first_solve, std::uint64_t seed) {
  const PlanningContext& c = *problem.ctx;
  PathSolution out;
  Trajectory& traj = out.trajectory;
  traj.intermediates = problem.intermediates();

  if (traj.intermediates == 0) {
    traj.waypoints.resize(static_cast<size_t>(c.num_arms()));
    for (size_t a = 0; a < traj.waypoints.size(); ++a) traj.waypoints[a] = {problem.start()[a], problem.goal[a]};
    traj.dense = straight_dense(problem.start(), problem.goal, c.constants);
    out.report.x_best = Eigen::VectorXd();
    out.report.f_best = path_objective(traj.x, problem, &out.terms);
    out.report.converged = true;
  } else {
    Objective obj([&problem](const Eigen::VectorXd& x) { return path_objective(x, problem); });
    const int n = problem.dimension();
    const Eigen::VectorXd init = first_solve ? problem.straight_guess() : problem.warm_start();
    SolveReport report;
    if (problem.budget > 0) {
      report = first_solve ? global_solve(obj, n, problem.budget, seed, init) : local_refine(obj, init, problem.budget);
    }
    if (report.x_best.size() != n) report.x_best = init;
    traj.x = report.x_best;
    traj.waypoints = problem.control_poses(traj.x);
    traj.dense = densify(traj.waypoints, c.constants);
    path_objective(traj.x, problem, &out.terms);
    if (!std::isfinite(report.f_best) || problem.budget <= 0) report.f_best = out.terms.total();
    out.report = std::move(report);
  }

  const auto coarse = coarse_samples(traj.waypoints, c.constants);
  traj.coarse.resize(coarse.size());
  for (size_t a = 0; a < coarse.size(); ++a) {
    for (const auto& p : coarse[a]) traj.coarse[a].push_back(p.position);
  }
  return out;
}

}  // namespace rekep
