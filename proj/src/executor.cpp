#include "rekep/executor.hpp"

#include "rekep/json_io.hpp"

#include <algorithm>
#include <chrono>
#include <sstream>

namespace rekep {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

json poses_json(const std::vector<Pose>& poses) {
  json out = json::array();
  for (const auto& p : poses) out.push_back(jsonio::to_json(p));
  return out;
}

json keypoints_json(const KeypointArray& k) {
  json out = json::array();
  for (Eigen::Index r = 0; r < k.rows(); ++r) out.push_back({k(r, 0), k(r, 1), k(r, 2)});
  return out;
}

json report_json(const SolveReport& r) {
  return {{"evals_used", r.evals_used}, {"f_best", r.f_best}, {"converged", r.converged}};
}

std::vector<Vec3> positions(const std::vector<Pose>& poses) {
  std::vector<Vec3> out;
  for (const auto& p : poses) out.push_back(p.position);
  return out;
}

void require_int(const json& v, const std::string& key) {
  if (!v.is_number_integer()) throw std::invalid_argument("'" + key + "' must be an integer");
}

void require_number(const json& v, const std::string& key) {
  if (!v.is_number()) throw std::invalid_argument("'" + key + "' must be a number");
}

}  // namespace

void ExecutorParams::validate() const {
  if (!(epsilon_pos >= 0.0) || !(epsilon_rot >= 0.0)) throw std::invalid_argument("epsilon must be >= 0");
  if (actions_per_iter < 1) throw std::invalid_argument("actions_per_iter must be >= 1");
  if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
  if (!(control_hz > 0.0)) throw std::invalid_argument("control_hz must be > 0");
  if (!(violation_slack >= 0.0)) throw std::invalid_argument("violation_slack must be >= 0");
  if (budgets.subgoal_first < 0 || budgets.subgoal_refine < 0 || budgets.path_first < 0 || budgets.path_refine < 0) {
    throw std::invalid_argument("solver budgets must be >= 0");
  }
  weights.validate();
}

json to_json(const ExecutorParams& p) {
  return {{"epsilon_pos", p.epsilon_pos},
          {"epsilon_rot", p.epsilon_rot},
          {"actions_per_iter", p.actions_per_iter},
          {"control_hz", p.control_hz},
          {"max_steps", p.max_steps},
          {"violation_slack", p.violation_slack},
          {"budgets",
           {{"subgoal_first", p.budgets.subgoal_first},
            {"subgoal_refine", p.budgets.subgoal_refine},
            {"path_first", p.budgets.path_first},
            {"path_refine", p.budgets.path_refine}}},
          {"seed", p.seed},
          {"recheck_subgoals", p.recheck_subgoals},
          {"weights", to_json(p.weights)}};
}

void update_from_json(ExecutorParams& p, const json& j) {
  if (!j.is_object()) throw std::invalid_argument("executor parameters must be an object");
  for (const auto& [key, v] : j.items()) {
    if (key == "epsilon_pos") require_number(v, key), p.epsilon_pos = v.get<double>();
    else if (key == "epsilon_rot") require_number(v, key), p.epsilon_rot = v.get<double>();
    else if (key == "actions_per_iter") require_int(v, key), p.actions_per_iter = v.get<int>();
    else if (key == "control_hz") require_number(v, key), p.control_hz = v.get<double>();
    else if (key == "max_steps") require_int(v, key), p.max_steps = v.get<int>();
    else if (key == "violation_slack") require_number(v, key), p.violation_slack = v.get<double>();
    else if (key == "recheck_subgoals") {
      if (!v.is_boolean()) throw std::invalid_argument("'recheck_subgoals' must be a boolean");
      p.recheck_subgoals = v.get<bool>();
    } else if (key == "seed") {
      if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
        throw std::invalid_argument("'seed' must be a non-negative integer");
      }
      p.seed = v.get<std::uint64_t>();
    } else if (key == "weights") {
      update_from_json(p.weights, v);
    } else if (key == "budgets") {
      if (!v.is_object()) throw std::invalid_argument("'budgets' must be an object");
      for (const auto& [bk, bv] : v.items()) {
        require_int(bv, bk);
        if (bk == "subgoal_first") p.budgets.subgoal_first = bv.get<int>();
        else if (bk == "subgoal_refine") p.budgets.subgoal_refine = bv.get<int>();
        else if (bk == "path_first") p.budgets.path_first = bv.get<int>();
        else if (bk == "path_refine") p.budgets.path_refine = bv.get<int>();
        else throw std::invalid_argument("unknown budget '" + bk + "'");
      }
    } else {
      throw std::invalid_argument("unknown executor parameter '" + key + "'");
    }
  }
}

int check_backtrack(const TaskSpec& task, int i, const KeypointArray& keypoints, std::span<const Vec3> ee,
                    double slack, bool recheck_subgoals) {
  auto holds = [&](const std::vector<dsl::ConstraintExpr>& set) {
    return std::all_of(set.begin(), set.end(), [&](const auto& f) {
      try {
        return f.evaluate(keypoints, ee) <= slack;
      } catch (const dsl::EvalError&) {
        return false;
      }
    });
  };
  for (int j = i; j >= 1; --j) {
    bool ok = holds(task.stage(j).path_constraints);
    if (ok && recheck_subgoals && j > 1) ok = holds(task.stage(j - 1).subgoal_constraints);
    if (ok) return j;
  }
  return 1;
}

SimState::SimState(Scene s, const std::vector<const KinematicChain*>& chains)
    : scene(std::move(s)), attachment(static_cast<int>(chains.size())) {
  for (const KinematicChain* chain : chains) {
    if (!chain) throw std::invalid_argument("every arm needs a kinematic chain");
    const JointVector q0 = chain->initial_q ? *chain->initial_q : JointVector::Zero(chain->dof());
    q.push_back(chain->clamp(q0));
    ee.push_back(fk(*chain, q.back()));
  }
}

ActionReport execute_actions(SimState& sim, const Trajectory& trajectory, int m,
                             const std::vector<const KinematicChain*>& chains, const IkOptions& ik_opts,
                             const StepCallback& on_step) {
  ActionReport out;
  const int arms = static_cast<int>(sim.ee.size());
  const int available = trajectory.size() > 0 ? static_cast<int>(trajectory.size()) - 1 : 0;
  const int todo = std::max(1, std::min(m, available));
  std::vector<RigidTransform> deltas(static_cast<size_t>(arms));

  for (int k = 1; k <= todo; ++k) {
    ++sim.step;
    for (int a = 0; a < arms; ++a) {
      const auto au = static_cast<size_t>(a);
      const Pose next = k <= available ? trajectory.dense[au][static_cast<size_t>(k)] : sim.ee[au];
      deltas[au] = delta_transform(sim.ee[au], next);
      if (const auto& att = sim.attachment.arm(a)) {
        for (auto& box : sim.scene.boxes) {
          if (box.group == att->group) box.center = apply(deltas[au], box.center);
        }
        for (auto& g : sim.scene.grasp_candidates[static_cast<size_t>(att->group)]) {
          g = Pose::FromFrame(compose(deltas[au], g.frame()));
        }
      }
      sim.ee[au] = next;
      if (au < chains.size() && chains[au]) sim.q[au] = ik(*chains[au], next, sim.q[au], ik_opts).q;
    }
    sim.scene.keypoints = forward_model(sim.scene.keypoints, sim.scene.groups, sim.attachment, deltas);

    EventOutcome ev = step_events(sim.scene, sim.step, sim.attachment);
    if (on_step) on_step(sim, ev);
    out.obstacles_moved = out.obstacles_moved || ev.obstacles_moved;
    out.steps.push_back(sim.step);
    out.events.push_back(std::move(ev.applied));
    out.detached.push_back(std::move(ev.detached));
    ++out.executed;
  }
  return out;
}

CollisionMap::CollisionMap(const Scene& scene) {
  if (scene.voxel_file) {
    voxels_ = read_voxel_file(*scene.voxel_file);
    if (voxels_.dims != scene.grid.dims) throw SceneError("voxel file dimensions do not match the scene grid");
    has_voxels_ = true;
  }
}

const EsdfGrid* CollisionMap::update(const Scene& scene, const std::vector<int>& excluded_groups,
                                     bool obstacles_moved) {
  std::vector<int> key = excluded_groups;
  std::sort(key.begin(), key.end());
  if (!key_ || *key_ != key || obstacles_moved) {
    Occupancy occ = rasterize_boxes(scene.boxes, scene.grid, [&key](const ObstacleBox& b) {
      return !b.group || !std::binary_search(key.begin(), key.end(), *b.group);
    });
    if (has_voxels_) {
      for (size_t c = 0; c < occ.cells.size(); ++c) occ.cells[c] = occ.cells[c] | voxels_.cells[c];
    }
    if (occ.count() == 0) {
      grid_.reset();
    } else {
      grid_ = build_esdf(occ, scene.grid);
    }
    key_ = std::move(key);
    ++rebuilds_;
  }
  return grid_ ? &*grid_ : nullptr;
}

std::string ExecutionLog::to_jsonl() const {
  std::ostringstream os;
  os << header.dump() << '\n';
  for (const auto& r : records) os << r.dump() << '\n';
  os << footer.dump() << '\n';
  return os.str();
}

ExecutionLog run(const RunInputs& in) {
  const TaskSpec& task = *in.task;
  const ExecutorParams& params = in.params;
  const int n_stages = task.num_stages();
  const int arms = static_cast<int>(in.chains.size());

  ExecutionLog log;
  log.header = {{"type", "header"},
                {"task_name", task.name},
                {"task", task_to_json(task)},
                {"scene_hash", in.scene.content_hash},
                {"num_arms", arms},
                {"num_keypoints", in.scene.num_keypoints()},
                {"params", to_json(params)},
                {"timestamp", in.timestamp}};

  int stage = 1;
  std::vector<int> stage_steps(static_cast<size_t>(std::max(0, n_stages)), 0);
  std::string error;

  try {
    params.validate();
    if (arms != task.num_arms) throw std::invalid_argument("chain count does not match the task's num_arms");
    bind_task(task, in.scene.num_keypoints());

    SimState sim(in.scene, in.chains);
    CollisionMap collision(sim.scene);
    bool obstacles_moved = false;

    std::optional<std::vector<Pose>> goal;
    std::optional<std::vector<std::vector<Vec3>>> prev_dense;
    std::optional<std::vector<std::vector<Pose>>> prev_waypoints;
    bool fresh = true;
    json last_costs = nullptr;
    int iteration = 0;

    auto reset_solver = [&]() {
      goal.reset();
      prev_dense.reset();
      prev_waypoints.reset();
      fresh = true;
      last_costs = nullptr;
    };
    auto make_record = [&]() {
      return json{{"type", "step"},
                  {"step", sim.step},
                  {"stage", std::min(stage, n_stages)},
                  {"ee", poses_json(sim.ee)},
                  {"keypoints", keypoints_json(sim.scene.keypoints)},
                  {"subgoal", goal ? poses_json(*goal) : json(nullptr)},
                  {"costs", last_costs},
                  {"events", json::array()}};
    };
    log.records.push_back(make_record());

    while (true) {
      if (stage > n_stages) {
        log.outcome = "success";
        break;
      }
      if (sim.step >= params.max_steps) {
        log.outcome = "timeout";
        break;
      }

      const std::vector<Vec3> ee_pts = positions(sim.ee);
      const int target = check_backtrack(task, stage, sim.scene.keypoints, ee_pts, params.violation_slack,
                                         params.recheck_subgoals);
      if (target < stage) {
        log.records.back()["events"].push_back({{"type", "backtrack"}, {"from", stage}, {"to", target}});
        ++log.backtracks;
        stage = target;
        reset_solver();
      }

      if (goal) {
        bool reached = true;
        for (int a = 0; a < arms; ++a) {
          const Pose& e = sim.ee[static_cast<size_t>(a)];
          const Pose& g = (*goal)[static_cast<size_t>(a)];
          if (!((e.position - g.position).norm() < params.epsilon_pos &&
                rotation_angle(e.orientation, g.orientation) < params.epsilon_rot)) {
            reached = false;
          }
        }
        if (reached) {
          const StageSpec& st = task.stage(stage);
          json values = json::array();
          for (const auto& f : st.subgoal_constraints) values.push_back(f.evaluate(sim.scene.keypoints, ee_pts));
          auto& events = log.records.back()["events"];
          if (st.grasp) {
            const int group = sim.scene.group_of.at(static_cast<size_t>(st.grasp->keypoint));
            sim.attachment.attach(st.grasp->arm, group, sim.ee[static_cast<size_t>(st.grasp->arm)]);
            events.push_back(
                {{"type", "grasp"}, {"arm", st.grasp->arm}, {"group", group}, {"keypoint", st.grasp->keypoint}});
          }
          if (st.release) {
            const auto& held = sim.attachment.arm(*st.release);
            events.push_back({{"type", "release"}, {"arm", *st.release}, {"group", held ? json(held->group) : json(nullptr)}});
            sim.attachment.release_arm(*st.release);
          }
          events.push_back({{"type", "stage_advance"}, {"from", stage}, {"to", stage + 1}, {"subgoal_values", values}});
          ++stage;
          reset_solver();
          continue;
        }
      }

      // Solve and execute.
      const StageSpec& st = task.stage(stage);
      const auto t0 = std::chrono::steady_clock::now();
      std::vector<int> excluded;
      for (int a = 0; a < arms; ++a) {
        if (const auto& att = sim.attachment.arm(a)) excluded.push_back(att->group);
      }
      if (st.grasp) excluded.push_back(sim.scene.group_of.at(static_cast<size_t>(st.grasp->keypoint)));
      const EsdfGrid* esdf = collision.update(sim.scene, excluded, obstacles_moved);
      obstacles_moved = false;

      std::vector<ArmModel> models;
      for (int a = 0; a < arms; ++a) {
        models.push_back({in.chains[static_cast<size_t>(a)], sim.q[static_cast<size_t>(a)], default_gripper_points()});
      }
      const PlanningContext ctx =
          make_context(st, sim.scene, sim.attachment, sim.ee, std::move(models), esdf, params.weights);

      const std::uint64_t base = params.seed ^ splitmix64(static_cast<std::uint64_t>(iteration));
      SubgoalProblem sp;
      sp.ctx = &ctx;
      sp.previous = fresh ? std::nullopt : goal;
      sp.budget = fresh ? params.budgets.subgoal_first : params.budgets.subgoal_refine;
      const SubgoalSolution sub = solve_subgoal(sp, fresh, splitmix64(base));

      PathProblem pp;
      pp.ctx = &ctx;
      pp.goal = sub.poses;
      pp.previous_dense = prev_dense;
      pp.previous_waypoints = prev_waypoints;
      pp.budget = fresh ? params.budgets.path_first : params.budgets.path_refine;
      const PathSolution path = plan_path(pp, fresh, splitmix64(base + 1));
      log.planning_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());

      goal = sub.poses;
      prev_dense = path.trajectory.coarse;
      prev_waypoints = path.trajectory.waypoints;
      fresh = false;
      last_costs = {{"subgoal", to_json(sub.terms)}, {"path", to_json(path.terms)}};
      json path_report = report_json(path.report);
      path_report["intermediates"] = path.trajectory.intermediates;
      path_report["dense_samples"] = path.trajectory.size();
      const json solver = {{"iteration", iteration}, {"subgoal", report_json(sub.report)}, {"path", path_report}};
      ++iteration;

      const int m = std::min(params.actions_per_iter, params.max_steps - sim.step);
      bool first_step = true;
      const int stage_now = stage;
      const ActionReport act =
          execute_actions(sim, path.trajectory, m, in.chains, IkOptions{}, [&](const SimState&, const EventOutcome& ev) {
            json rec = make_record();
            if (first_step) rec["solver"] = solver;
            first_step = false;
            for (int idx : ev.applied) {
              const auto& e = sim.scene.events[static_cast<size_t>(idx)];
              json released = json::array();
              for (const auto& n : ev.detached) {
                if (n.group == e.group) released.push_back(n.arm);
              }
              rec["events"].push_back({{"type", "disturbance"},
                                       {"event", idx},
                                       {"group", e.group},
                                       {"detach", e.detach},
                                       {"released_arms", released}});
            }
            log.records.push_back(std::move(rec));
          });
      obstacles_moved = act.obstacles_moved;
      stage_steps[static_cast<size_t>(stage_now - 1)] += act.executed;
      log.steps = sim.step;
    }
  } catch (const std::exception& e) {
    log.outcome = "error";
    error = e.what();
  }

  log.footer = {{"type", "footer"},
                {"outcome", log.outcome},
                {"steps", log.steps},
                {"backtracks", log.backtracks},
                {"final_stage", std::min(stage, n_stages + 1)},
                {"stage_durations", stage_steps}};
  if (!error.empty()) log.footer["error"] = error;
  return log;
}

}  // namespace rekep
