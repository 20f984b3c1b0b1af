#include "rekep/commands.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <map>

namespace {

std::string flag_name(std::string key) {
  for (auto& ch : key) {
    if (ch == '_') ch = '-';
  }
  return "--" + key;
}

// Registers --<field-name> for every numeric executor/weight field. Values are kept as text and
// parsed as JSON so integers stay integers.
std::map<std::string, std::string>& add_param_flags(CLI::App* cmd, std::map<std::string, std::string>& store) {
  for (const auto& key : rekep::override_keys()) {
    cmd->add_option_function<std::string>(
        flag_name(key), [&store, key](const std::string& v) { store[key] = v; }, "override " + key);
  }
  return store;
}

rekep::RunConfig build_config(const std::string& path, const std::map<std::string, std::string>& overrides,
                              const std::optional<std::uint64_t>& seed, const std::string& output,
                              bool recheck_subgoals) {
  rekep::RunConfig cfg = rekep::load_run_config(path);
  nlohmann::json flat = nlohmann::json::object();
  for (const auto& [k, v] : overrides) {
    try {
      flat[k] = nlohmann::json::parse(v);
    } catch (const nlohmann::json::parse_error&) {
      throw rekep::ConfigError("value for --" + k + " is not a number: " + v);
    }
  }
  rekep::apply_overrides(cfg, flat);
  if (recheck_subgoals) cfg.params.recheck_subgoals = true;
  rekep::resolve_seed(cfg, seed, std::getenv("RK_SEED"));
  if (!output.empty()) cfg.output = output;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Keypoint-constraint manipulation planner"};
  app.require_subcommand(1);

  std::string config_path, output, seed_text;
  bool recheck = false;
  std::map<std::string, std::string> overrides;

  auto* run = app.add_subcommand("run", "execute a task closed-loop and write the log");
  auto* plan = app.add_subcommand("plan", "solve the first sub-goal and path without executing");
  for (auto* cmd : {run, plan}) {
    cmd->add_option("config", config_path, "run configuration file")->required();
    cmd->add_option("-o,--output", output, "output file");
    cmd->add_option("--seed", seed_text, "random seed");
    cmd->add_flag("--recheck-subgoals", recheck, "also backtrack on violated sub-goals of the previous stage");
    add_param_flags(cmd, overrides);
  }

  rekep::ProposeArgs propose_args;
  std::vector<double> ws_min{0.0, 0.0, 0.0}, ws_max{1.0, 1.0, 1.0};
  std::string propose_seed = "0";
  auto* propose = app.add_subcommand("propose", "keypoint candidates from a feature map and masks");
  propose->add_option("features", propose_args.features, "RKFM feature map")->required();
  propose->add_option("masks", propose_args.masks, "RKMS mask set")->required();
  propose->add_option("--workspace-min", ws_min, "workspace lower corner")->expected(3);
  propose->add_option("--workspace-max", ws_max, "workspace upper corner")->expected(3);
  propose->add_option("--clusters", propose_args.options.clusters, "clusters per mask");
  propose->add_option("--bandwidth", propose_args.options.bandwidth, "minimum candidate separation (m)");
  propose->add_option("--seed", propose_seed, "clustering seed");
  propose->add_flag("--cosine", propose_args.options.cosine, "cluster normalized raw features");
  propose->add_option("-o,--output", propose_args.output, "write candidates as JSON");

  rekep::TrackArgs track_args;
  auto* track = app.add_subcommand("track", "track keypoints through a sequence of feature clouds");
  track->add_option("frames", track_args.frames, "directory of RKFC frames")->required();
  track->add_option("--init", track_args.init_keypoints, "initial keypoints JSON");
  track->add_option("-o,--output", track_args.output, "write per-frame positions as JSON");

  std::string log_path, scene_path;
  auto* replay = app.add_subcommand("replay", "re-validate an execution log");
  replay->add_option("log", log_path, "JSONL execution log")->required();
  replay->add_option("--scene", scene_path, "scene file whose hash must match the log");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : rekep::kExitError;
  }

  try {
    if (run->parsed() || plan->parsed()) {
      std::optional<std::uint64_t> seed;
      if (!seed_text.empty()) seed = rekep::parse_seed(seed_text);
      if (run->parsed()) {
        const auto cfg = build_config(config_path, overrides, seed, output, recheck);
        return rekep::cmd_run(cfg, std::cout, std::cerr);
      }
      const auto cfg = build_config(config_path, overrides, seed, {}, recheck);
      return rekep::cmd_plan(cfg, output, std::cout, std::cerr);
    }
    if (propose->parsed()) {
      propose_args.workspace = rekep::WorkspaceBounds(rekep::Vec3(ws_min[0], ws_min[1], ws_min[2]),
                                                      rekep::Vec3(ws_max[0], ws_max[1], ws_max[2]));
      propose_args.options.seed = rekep::parse_seed(propose_seed);
      return rekep::cmd_propose(propose_args, std::cout, std::cerr);
    }
    if (track->parsed()) return rekep::cmd_track(track_args, std::cout, std::cerr);
    if (replay->parsed()) {
      std::optional<std::filesystem::path> scene;
      if (!scene_path.empty()) scene = scene_path;
      return rekep::cmd_replay(log_path, scene, std::cout, std::cerr);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return rekep::kExitError;
  }
  return rekep::kExitError;
}
