#include "rekep/planner.hpp"
#include "rekep/task.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <random>

using namespace rekep;

namespace {

struct PourFixture {
  Scene scene = load_scene(testing::data_path("scenes/pour.json"));
  TaskSpec task = load_task(testing::data_path("tasks/pour.json"));
  KinematicChain chain = load_chain(testing::data_path("chains/reference7.json"));
  EsdfGrid esdf;
  Pose ee;

  PourFixture() {
    esdf = build_esdf(rasterize_boxes(scene.boxes, scene.grid), scene.grid);
    ee = fk(chain, *chain.initial_q);
  }

  PlanningContext context(int stage, const AttachmentState& att, const Pose& current) const {
    std::vector<ArmModel> arms{{&chain, *chain.initial_q, default_gripper_points()}};
    return make_context(task.stage(stage), scene, att, {current}, std::move(arms), &esdf, CostWeights{});
  }
};

Eigen::Matrix4d frame_matrix(const Pose& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = p.orientation.toRotationMatrix();
  m.topRightCorner<3, 1>() = p.position;
  return m;
}

double angle_between(const Quat& a, const Quat& b) {
  return 2.0 * std::acos(std::min(1.0, std::abs(a.normalized().dot(b.normalized()))));
}

double hinge(double v) { return v > 0 ? v + v * v : 0.0; }

// Sub-goal objective summed term by term with explicit 4x4 transforms.
double subgoal_by_hand(const PlanningContext& c, const Pose& e, const std::optional<Pose>& previous) {
  const CostWeights& w = c.weights;
  const Eigen::Matrix4d delta = frame_matrix(e) * frame_matrix(c.current[0]).inverse();
  KeypointArray moved = c.keypoints;
  if (const auto& att = c.attachment.arm(0)) {
    for (int idx : c.groups[static_cast<size_t>(att->group)]) {
      moved.row(idx) = (delta * c.keypoints.row(idx).transpose().homogeneous()).head<3>().transpose();
    }
  }
  const std::vector<Vec3> ee{e.position};
  double total = 0.0;
  for (const auto& f : c.stage->subgoal_constraints) total += w.constraint_violation * hinge(f.evaluate(moved, ee));
  const Eigen::Matrix3d r = e.orientation.toRotationMatrix();
  for (const Vec3& b : c.body_points[0]) {
    total += w.collision * std::max(0.0, 0.15 - c.esdf->query(r * b + e.position));
  }
  total += w.reachability * ik(*c.arms[0].chain, e, c.arms[0].q_seed).residual;
  total += w.pose_regularization *
           ((e.position - c.current[0].position).norm() + 0.3 * angle_between(e.orientation, c.current[0].orientation));
  if (previous) {
    total += w.consistency *
             ((e.position - previous->position).norm() + 0.3 * angle_between(e.orientation, previous->orientation));
  }
  total += w.hemisphere * std::max(0.0, r(2, 2));
  if (c.stage->grasp && c.grasp_pose) {
    total += w.grasp_metric * ((e.position - c.grasp_pose->position).norm() +
                               angle_between(e.orientation, c.grasp_pose->orientation));
  }
  return total;
}

}  // namespace

TEST_CASE("violation penalty and pose distance") {
  CHECK(violation_penalty(-1.0) == 0.0);
  CHECK(violation_penalty(0.0) == 0.0);
  CHECK(violation_penalty(0.5) == 0.75);
  CHECK(violation_penalty(2.0) == 6.0);
  const Pose a(Vec3(0, 0, 0), Quat::Identity());
  const Pose b(Vec3(0.3, 0.4, 0), Quat(Eigen::AngleAxisd(1.0, Vec3::UnitX())));
  CHECK(pose_distance(a, b) == doctest::Approx(0.5 + 0.3));
}

TEST_CASE("weights validate and round trip through json") {
  CostWeights w;
  CHECK_NOTHROW(w.validate());
  CostWeights back;
  update_from_json(back, to_json(w));
  CHECK(to_json(back) == to_json(w));
  w.collision = 300.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  w = CostWeights{};
  w.path_length = -1.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
  CHECK_THROWS_AS(update_from_json(back, nlohmann::json{{"nope", 1.0}}), std::invalid_argument);
}

TEST_CASE("pose encoding round trips over the downward hemisphere") {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const WorkspaceBounds ws(Vec3(0, -0.5, 0), Vec3(1, 0.5, 0.6));
  const DecisionBox box = pose_box(ws);
  for (int t = 0; t < 200; ++t) {
    Eigen::Matrix<double, 6, 1> x;
    for (int i = 0; i < 6; ++i) x[i] = u(rng) * 0.999;
    const Pose p = decode_pose(box.denormalize(x));
    CHECK((p.orientation * Vec3::UnitZ()).z() <= 1e-12);
    const Pose again = decode_pose(encode_pose(p));
    CHECK((again.position - p.position).norm() < 1e-12);
    CHECK(rotation_angle(again.orientation, p.orientation) < 1e-9);
  }
  const Pose down(Vec3(0.5, 0, 0.3), Quat(0, 1, 0, 0));
  CHECK(encode_pose(down).tail<3>().norm() < 1e-9);
}

TEST_CASE("intermediate count follows the distance rule") {
  const PlannerConstants c;
  const Pose a(Vec3(0, 0, 0), Quat::Identity());
  auto count = [&](const Pose& b) { return intermediate_count({a}, {b}, c); };
  CHECK(count(a) == 0);
  CHECK(count(Pose(Vec3(0.2, 0, 0), Quat::Identity())) == 0);
  CHECK(count(Pose(Vec3(0.21, 0, 0), Quat::Identity())) == 1);
  CHECK(count(Pose(Vec3(0.5, 0, 0), Quat::Identity())) == 2);
  CHECK(count(Pose(Vec3(0, 0, 0), Quat(Eigen::AngleAxisd(M_PI / 2 + 0.01, Vec3::UnitZ())))) == 2);
  CHECK(count(Pose(Vec3(5, 0, 0), Quat::Identity())) == 8);
}

TEST_CASE("straight dense sampling count and spacing") {
  const PlannerConstants c;
  const Pose a(Vec3(0, 0, 0), Quat::Identity());
  const Pose b(Vec3(0.1, 0, 0), Quat(Eigen::AngleAxisd(0.05, Vec3::UnitZ())));
  const auto d = straight_dense({a}, {b}, c);
  CHECK(d[0].size() == 21);
  CHECK(d[0].front().position == a.position);
  CHECK(d[0].back().position == b.position);
  const Pose r(Vec3(0.0, 0, 0), Quat(Eigen::AngleAxisd(0.5, Vec3::UnitZ())));
  CHECK(straight_dense({a}, {r}, c)[0].size() == static_cast<size_t>(std::ceil(0.5 / (M_PI / 180)) + 1));
  CHECK(straight_dense({a}, {a}, c)[0].size() == 1);
}

TEST_CASE("densify passes through the control poses within step bounds") {
  const PlannerConstants c;
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int t = 0; t < 20; ++t) {
    std::vector<Pose> ctrl;
    for (int i = 0; i < 4; ++i) {
      ctrl.emplace_back(Vec3(u(rng), u(rng), u(rng)), Quat(Eigen::AngleAxisd(u(rng), Vec3(u(rng), 1, u(rng)).normalized())));
    }
    const auto d = densify({ctrl}, c)[0];
    CHECK(d.front().position == ctrl.front().position);
    CHECK(d.back().position == ctrl.back().position);
    for (const Pose& p : ctrl) {
      bool hit = false;
      for (const Pose& q : d) hit = hit || (q.position - p.position).norm() < 1e-12;
      CHECK(hit);
    }
    for (size_t i = 1; i < d.size(); ++i) {
      CHECK((d[i].position - d[i - 1].position).norm() <= c.dense_step_pos + 1e-9);
      CHECK(rotation_angle(d[i].orientation, d[i - 1].orientation) <= c.dense_step_rot + 1e-9);
    }
  }
}

TEST_CASE("sub-goal objective at the constraint optimum reduces to auxiliary terms") {
  const PourFixture f;
  AttachmentState att(1);
  const PlanningContext ctx = f.context(1, att, f.ee);
  SubgoalProblem sp;
  sp.ctx = &ctx;
  const Pose at_handle(f.scene.keypoints.row(3).transpose(), ctx.grasp_pose->orientation);
  CostTerms terms;
  subgoal_objective(sp.encode({at_handle}), sp, &terms);
  CHECK(terms.constraint < 1e-9);
  CHECK(terms.grasp < 1e-6);
}

TEST_CASE("pose inside an obstacle pays a collision cost") {
  const PourFixture f;
  AttachmentState att(1);
  const PlanningContext ctx = f.context(1, att, f.ee);
  SubgoalProblem sp;
  sp.ctx = &ctx;
  const Pose inside(f.scene.boxes[0].center, Quat(0, 1, 0, 0));
  CostTerms terms;
  subgoal_objective(sp.encode({inside}), sp, &terms);
  CHECK(terms.collision >= ctx.weights.collision * 0.15 * 0.5);
}

TEST_CASE("sub-goal objective matches a term-by-term hand summation") {
  const PourFixture f;
  AttachmentState att(1);
  att.attach(0, f.scene.group_of[3], f.ee);
  const PlanningContext held = f.context(2, att, f.ee);
  AttachmentState none(1);
  const PlanningContext free = f.context(1, none, f.ee);
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> u(-0.95, 0.95);
  for (const PlanningContext* ctx : {&held, &free}) {
    for (int t = 0; t < 20; ++t) {
      SubgoalProblem sp;
      sp.ctx = ctx;
      Eigen::VectorXd x(6);
      for (int i = 0; i < 6; ++i) x[i] = u(rng);
      std::optional<Pose> prev;
      if (t % 2) {
        prev = Pose(f.ee.position + Vec3(0.05, 0, 0), f.ee.orientation);
        sp.previous = std::vector<Pose>{*prev};
      }
      const Pose e = sp.decode(x)[0];
      const double expected = subgoal_by_hand(*ctx, e, prev);
      CHECK(std::abs(subgoal_objective(x, sp) - expected) <= 1e-9 * std::max(1.0, expected));
    }
  }
}

TEST_CASE("straight path with no intermediates costs its weighted length") {
  const PourFixture f;
  AttachmentState att(1);
  const Pose start(Vec3(0.4, 0.0, 0.4), Quat(0, 1, 0, 0));
  PlanningContext ctx = f.context(1, att, start);
  ctx.esdf = nullptr;
  PathProblem pp;
  pp.ctx = &ctx;
  pp.goal = {Pose(Vec3(0.55, 0.05, 0.4), Quat(0, 1, 0, 0))};
  REQUIRE(pp.intermediates() == 0);
  const PathSolution sol = plan_path(pp, true, 1);
  const double length = (pp.goal[0].position - start.position).norm();
  CHECK(sol.terms.path_length == doctest::Approx(ctx.weights.path_length * length).epsilon(1e-12));
  CHECK(sol.report.f_best == doctest::Approx(sol.terms.total()));
  CHECK(sol.trajectory.size() == static_cast<size_t>(std::ceil(length / 0.005)) + 1);
}

TEST_CASE("path objective charges path constraints and table clearance per sample") {
  const PourFixture f;
  AttachmentState att(1);
  const Pose start(Vec3(0.4, 0.0, 0.4), Quat(0, 1, 0, 0));
  PlanningContext ctx = f.context(2, att, start);
  ctx.esdf = nullptr;
  PathProblem pp;
  pp.ctx = &ctx;
  pp.goal = {Pose(Vec3(0.4, 0.0, -0.02), Quat(0, 1, 0, 0))};
  CostTerms terms;
  const Eigen::VectorXd x = pp.straight_guess();
  path_objective(x, pp, &terms);
  const auto samples = coarse_samples(pp.control_poses(x), ctx.constants)[0];
  double table = 0.0, constraint = 0.0;
  for (const Pose& p : samples) {
    table += ctx.weights.table_clearance * std::max(0.0, -p.position.z());
    // nothing is held, so keypoints stay put; only the ee term varies
    const std::vector<Vec3> ee{p.position};
    for (const auto& c : ctx.stage->path_constraints) {
      constraint += ctx.weights.constraint_violation * hinge(c.evaluate(ctx.keypoints, ee));
    }
  }
  CHECK(terms.table_clearance == doctest::Approx(table));
  CHECK(terms.table_clearance > 0.0);
  CHECK(terms.constraint == doctest::Approx(constraint));
}

TEST_CASE("first solve on the grasp stage reaches the handle") {
  const PourFixture f;
  AttachmentState att(1);
  const PlanningContext ctx = f.context(1, att, f.ee);
  SubgoalProblem sp;
  sp.ctx = &ctx;
  sp.budget = 4000;
  const SubgoalSolution a = solve_subgoal(sp, true, 5);
  const SubgoalSolution b = solve_subgoal(sp, true, 5);
  CHECK(a.x == b.x);
  CHECK(a.report.evals_used <= 4000);
  CHECK((a.poses[0].position - f.scene.keypoints.row(3).transpose()).norm() < 1e-3);
}
