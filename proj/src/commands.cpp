#include "rekep/commands.hpp"

#include "rekep/binary_io.hpp"
#include "rekep/json_io.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace rekep {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct LoadedRun {
  TaskSpec task;
  Scene scene;
  std::vector<KinematicChain> chains;

  std::vector<const KinematicChain*> chain_ptrs() const {
    std::vector<const KinematicChain*> out;
    for (const auto& c : chains) out.push_back(&c);
    return out;
  }
};

LoadedRun load_run(const RunConfig& config) {
  config.validate();
  LoadedRun r;
  r.task = load_task(config.task);
  r.scene = load_scene(config.scene);
  for (const auto& c : config.chains) r.chains.push_back(load_chain(c));
  return r;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

json poses_json(const std::vector<Pose>& poses) {
  json a = json::array();
  for (const auto& p : poses) a.push_back(jsonio::to_json(p));
  return a;
}

json rows_json(const KeypointArray& k) {
  json a = json::array();
  for (Eigen::Index r = 0; r < k.rows(); ++r) a.push_back({k(r, 0), k(r, 1), k(r, 2)});
  return a;
}

KeypointArray load_keypoints(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open keypoint file " + path.string());
  json j = json::parse(in);
  if (j.is_object() && j.contains("keypoints")) j = j["keypoints"];
  if (!j.is_array() || j.empty()) throw std::runtime_error(path.string() + ": expected a non-empty K x 3 array");
  KeypointArray k(static_cast<Eigen::Index>(j.size()), 3);
  for (size_t i = 0; i < j.size(); ++i) k.row(static_cast<Eigen::Index>(i)) = jsonio::vec3(j[i], "keypoint").transpose();
  return k;
}

class ReplayError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace

int cmd_run(const RunConfig& config, std::ostream& out, std::ostream& err, const std::string& timestamp) {
  try {
    const LoadedRun loaded = load_run(config);
    RunInputs in;
    in.task = &loaded.task;
    in.scene = loaded.scene;
    in.chains = loaded.chain_ptrs();
    in.params = config.params;
    in.timestamp = timestamp.empty() ? utc_now() : timestamp;
    const ExecutionLog log = run(in);
    if (!config.output.empty()) write_text(config.output, log.to_jsonl());

    const double mean_ms =
        log.planning_seconds.empty()
            ? 0.0
            : 1000.0 * std::accumulate(log.planning_seconds.begin(), log.planning_seconds.end(), 0.0) /
                  static_cast<double>(log.planning_seconds.size());
    out << "outcome=" << log.outcome << " steps=" << log.steps << " backtracks=" << log.backtracks
        << " mean_planning_ms=" << std::fixed << std::setprecision(2) << mean_ms << '\n';
    if (log.outcome == "success") return kExitSuccess;
    if (log.outcome == "timeout") return kExitTimeout;
    err << "run failed: " << log.footer.value("error", std::string("unknown error")) << '\n';
    return kExitError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

int cmd_plan(const RunConfig& config, const fs::path& output, std::ostream& out, std::ostream& err) {
  try {
    const LoadedRun loaded = load_run(config);
    const ExecutorParams& params = config.params;
    if (static_cast<int>(loaded.chains.size()) != loaded.task.num_arms) {
      throw std::invalid_argument("chain count does not match the task's num_arms");
    }
    bind_task(loaded.task, loaded.scene.num_keypoints());
    const auto chains = loaded.chain_ptrs();
    SimState sim(loaded.scene, chains);
    const StageSpec& stage = loaded.task.stage(1);

    std::vector<int> excluded;
    if (stage.grasp) excluded.push_back(sim.scene.group_of.at(static_cast<size_t>(stage.grasp->keypoint)));
    CollisionMap collision(sim.scene);
    const EsdfGrid* esdf = collision.update(sim.scene, excluded, false);

    std::vector<ArmModel> models;
    for (size_t a = 0; a < chains.size(); ++a) models.push_back({chains[a], sim.q[a], default_gripper_points()});
    const PlanningContext ctx =
        make_context(stage, sim.scene, sim.attachment, sim.ee, std::move(models), esdf, params.weights);

    SubgoalProblem sp;
    sp.ctx = &ctx;
    sp.budget = params.budgets.subgoal_first;
    const SubgoalSolution sub = solve_subgoal(sp, true, params.seed);
    PathProblem pp;
    pp.ctx = &ctx;
    pp.goal = sub.poses;
    pp.budget = params.budgets.path_first;
    const PathSolution path = plan_path(pp, true, params.seed + 1);

    json dense = json::array();
    json waypoints = json::array();
    for (size_t a = 0; a < path.trajectory.dense.size(); ++a) {
      dense.push_back(poses_json(path.trajectory.dense[a]));
      waypoints.push_back(poses_json(path.trajectory.waypoints[a]));
    }
    const json result = {{"stage", 1},
                         {"start", poses_json(sim.ee)},
                         {"subgoal", poses_json(sub.poses)},
                         {"costs", {{"subgoal", to_json(sub.terms)}, {"path", to_json(path.terms)}}},
                         {"intermediates", path.trajectory.intermediates},
                         {"waypoints", waypoints},
                         {"dense", dense}};
    if (!output.empty()) write_text(output, result.dump(2) + "\n");
    out << "subgoal_cost=" << sub.terms.total() << " path_cost=" << path.terms.total()
        << " intermediates=" << path.trajectory.intermediates << " dense_samples=" << path.trajectory.size() << '\n';
    return kExitSuccess;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

int cmd_propose(const ProposeArgs& args, std::ostream& out, std::ostream& err) {
  try {
    const FeatureMap features = read_feature_map(args.features);
    const MaskSet masks = read_masks(args.masks);
    const auto candidates = propose(features, masks, args.workspace, args.options);
    json list = json::array();
    for (const auto& c : candidates) {
      list.push_back({{"position", jsonio::to_json(c.position)}, {"group", c.group}, {"cluster_size", c.cluster_size}});
    }
    if (!args.output.empty()) write_text(args.output, list.dump(2) + "\n");
    out << list.dump() << '\n';
    return kExitSuccess;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

int cmd_track(const TrackArgs& args, std::ostream& out, std::ostream& err) {
  try {
    if (args.init_keypoints.empty()) throw std::runtime_error("tracking needs initial keypoints");
    if (!fs::is_directory(args.frames)) throw std::runtime_error("frame directory not found: " + args.frames.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(args.frames)) {
      if (entry.is_regular_file() && entry.path().extension() == ".rkfc") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .rkfc frames in " + args.frames.string());

    KeypointArray previous = load_keypoints(args.init_keypoints);
    std::optional<PointTracker> tracker;
    json frames = json::array();
    for (const auto& file : files) {
      const FeatureCloud cloud = read_feature_cloud(file);
      if (!tracker) tracker.emplace(cloud, previous, args.options);
      const TrackFrame f = tracker->track(cloud, previous);
      previous = f.positions;
      frames.push_back({{"frame", file.filename().string()}, {"positions", rows_json(f.positions)}, {"stale", f.stale}});
    }
    const json result = {{"frames", frames}};
    if (!args.output.empty()) write_text(args.output, result.dump(2) + "\n");
    out << "tracked " << files.size() << " frames, " << previous.rows() << " keypoints\n";
    return kExitSuccess;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
}

int cmd_replay(const fs::path& log_path, const std::optional<fs::path>& scene, std::ostream& out, std::ostream& err) {
  try {
    std::ifstream in(log_path, std::ios::binary);
    if (!in) throw ReplayError("cannot open log " + log_path.string());
    std::vector<json> lines;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        lines.push_back(json::parse(line));
      } catch (const json::parse_error& e) {
        throw ReplayError("line " + std::to_string(line_no) + ": not valid JSON (" + e.what() + ")");
      }
    }
    if (lines.size() < 3) throw ReplayError("log needs a header, at least one step record and a footer");
    const json& header = lines.front();
    const json& footer = lines.back();
    if (header.value("type", "") != "header") throw ReplayError("first line is not a header");
    if (footer.value("type", "") != "footer") throw ReplayError("last line is not a footer (truncated log?)");

    TaskSpec task;
    int arms = 0;
    int num_keypoints = 0;
    try {
      task = task_from_json(header.at("task"));
      arms = header.at("num_arms").get<int>();
      num_keypoints = header.at("num_keypoints").get<int>();
      if (!header.at("scene_hash").is_string()) throw ReplayError("scene_hash must be a string");
    } catch (const json::exception& e) {
      throw ReplayError(std::string("malformed header: ") + e.what());
    }
    const int n = task.num_stages();

    if (scene) {
      const Scene s = load_scene(*scene);
      if (s.content_hash != header["scene_hash"].get<std::string>()) {
        throw ReplayError("scene hash mismatch: log " + header["scene_hash"].get<std::string>() + ", scene file " +
                          s.content_hash);
      }
    }

    int backtracks = 0;
    int expected_stage = 1;
    int last_step = -1;
    for (size_t r = 1; r + 1 < lines.size(); ++r) {
      const json& rec = lines[r];
      int step = -1;
      try {
        if (rec.at("type") != "step") throw ReplayError("line " + std::to_string(r + 1) + ": expected a step record");
        step = rec.at("step").get<int>();
        const std::string at = "step " + std::to_string(step) + ": ";
        if (step != last_step + 1) throw ReplayError(at + "expected step " + std::to_string(last_step + 1));
        const int stage = rec.at("stage").get<int>();
        if (stage < 1 || stage > n) throw ReplayError(at + "stage " + std::to_string(stage) + " out of range");
        if (stage != std::min(expected_stage, n)) {
          throw ReplayError(at + "stage " + std::to_string(stage) + " does not follow from the logged events (expected " +
                            std::to_string(std::min(expected_stage, n)) + ")");
        }
        if (static_cast<int>(rec.at("ee").size()) != arms) throw ReplayError(at + "end-effector count mismatch");
        if (static_cast<int>(rec.at("keypoints").size()) != num_keypoints) throw ReplayError(at + "keypoint count mismatch");
        expected_stage = stage;
        for (const auto& ev : rec.at("events")) {
          const std::string type = ev.at("type").get<std::string>();
          if (type == "backtrack") {
            const int from = ev.at("from").get<int>(), to = ev.at("to").get<int>();
            if (from != expected_stage || to < 1 || to >= from) throw ReplayError(at + "inconsistent backtrack event");
            expected_stage = to;
            ++backtracks;
          } else if (type == "stage_advance") {
            const int from = ev.at("from").get<int>(), to = ev.at("to").get<int>();
            if (from != expected_stage || to != from + 1) throw ReplayError(at + "inconsistent stage_advance event");
            expected_stage = to;
          } else if (type != "grasp" && type != "release" && type != "disturbance") {
            throw ReplayError(at + "unknown event type '" + type + "'");
          }
        }
      } catch (const json::exception& e) {
        throw ReplayError("step record on line " + std::to_string(r + 1) + ": " + e.what());
      }
      last_step = step;
    }

    try {
      const std::string outcome = footer.at("outcome").get<std::string>();
      if (outcome != "success" && outcome != "timeout" && outcome != "error") {
        throw ReplayError("footer: unknown outcome '" + outcome + "'");
      }
      if (footer.at("steps").get<int>() != last_step) throw ReplayError("footer: step count disagrees with records");
      if (footer.at("backtracks").get<int>() != backtracks) throw ReplayError("footer: backtrack count disagrees with events");
      if (footer.at("final_stage").get<int>() != std::min(expected_stage, n + 1)) {
        throw ReplayError("footer: final_stage disagrees with events");
      }
      if (outcome == "success" && expected_stage != n + 1) throw ReplayError("footer: success without completing all stages");
      out << "ok: " << lines.size() - 2 << " step records, outcome=" << outcome << '\n';
    } catch (const json::exception& e) {
      throw ReplayError(std::string("malformed footer: ") + e.what());
    }
    return kExitSuccess;
  } catch (const std::exception& e) {
    err << "replay: " << e.what() << '\n';
    return kExitError;
  }
}

}  // namespace rekep
