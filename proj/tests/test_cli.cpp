#include "rekep/commands.hpp"
#include "rekep/config.hpp"
#include "test_support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sstream>

using namespace rekep;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

RunConfig pour_config(const std::string& scratch) {
  RunConfig cfg = load_run_config(testing::data_path("configs/pour.json"));
  cfg.output = testing::scratch_dir(scratch) / "run.jsonl";
  return cfg;
}

std::vector<json> read_jsonl(const fs::path& p) {
  std::istringstream in(testing::slurp(p));
  std::vector<json> out;
  for (std::string line; std::getline(in, line);) out.push_back(json::parse(line));
  return out;
}

}  // namespace

TEST_CASE("config files resolve paths and reject unknown keys") {
  const RunConfig cfg = load_run_config(testing::data_path("configs/pour.json"));
  CHECK(cfg.task == testing::data_path("tasks/pour.json"));
  REQUIRE(cfg.chains.size() == 1);
  CHECK(cfg.params.epsilon_pos == 0.0005);
  CHECK_FALSE(cfg.seed_from_file);
  CHECK_NOTHROW(cfg.validate());
  CHECK_THROWS_AS(config_from_json(json{{"task", "a"}, {"scene", "b"}, {"chain", "c"}, {"colour", 1}}), ConfigError);
  CHECK_THROWS_AS(load_run_config(testing::data_path("configs/none.json")), ConfigError);
  RunConfig missing = cfg;
  missing.scene = "/nonexistent/scene.json";
  CHECK_THROWS_AS(missing.validate(), ConfigError);
}

TEST_CASE("every numeric parameter can be overridden by name") {
  const auto keys = override_keys();
  for (const char* k : {"epsilon_pos", "epsilon_rot", "max_steps", "subgoal_first", "path_refine", "collision",
                        "constraint_violation", "hemisphere", "control_hz"}) {
    CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());
  }
  CHECK(std::find(keys.begin(), keys.end(), "seed") == keys.end());
  RunConfig cfg = load_run_config(testing::data_path("configs/pour.json"));
  apply_overrides(cfg, json{{"epsilon_pos", 0.002}, {"path_refine", 77}, {"collision", 3.5}});
  CHECK(cfg.params.epsilon_pos == 0.002);
  CHECK(cfg.params.budgets.path_refine == 77);
  CHECK(cfg.params.weights.collision == 3.5);
  CHECK_THROWS_AS(apply_overrides(cfg, json{{"warp_factor", 9}}), ConfigError);
}

TEST_CASE("seed precedence: flag, then file, then environment") {
  RunConfig cfg = load_run_config(testing::data_path("configs/pour.json"));
  resolve_seed(cfg, std::nullopt, nullptr);
  CHECK(cfg.params.seed == 0);
  resolve_seed(cfg, std::nullopt, "42");
  CHECK(cfg.params.seed == 42);
  resolve_seed(cfg, 7, "42");
  CHECK(cfg.params.seed == 7);
  cfg.params.seed = 3;
  cfg.seed_from_file = true;
  resolve_seed(cfg, std::nullopt, "42");
  CHECK(cfg.params.seed == 3);
  CHECK(parse_seed("18446744073709551615") == 18446744073709551615ull);
  CHECK_THROWS(parse_seed("-1"));
  CHECK_THROWS(parse_seed("12abc"));
}

TEST_CASE("run succeeds on the pour fixture and the log replays") {
  const RunConfig cfg = pour_config("cli_run");
  std::ostringstream out, err;
  REQUIRE(cmd_run(cfg, out, err, "t0") == kExitSuccess);
  CHECK(out.str().find("outcome=success") != std::string::npos);
  const auto lines = read_jsonl(cfg.output);
  CHECK(lines.front()["type"] == "header");
  CHECK(lines.back()["outcome"] == "success");

  std::ostringstream rout, rerr;
  CHECK(cmd_replay(cfg.output, cfg.scene, rout, rerr) == kExitSuccess);
}

TEST_CASE("run reports missing inputs and timeouts through exit codes") {
  RunConfig cfg = pour_config("cli_exit");
  cfg.scene = "/nonexistent/scene.json";
  std::ostringstream out, err;
  CHECK(cmd_run(cfg, out, err) == kExitError);
  CHECK(err.str().find("/nonexistent/scene.json") != std::string::npos);

  RunConfig quick = pour_config("cli_exit");
  quick.params.max_steps = 1;
  std::ostringstream o2, e2;
  CHECK(cmd_run(quick, o2, e2) == kExitTimeout);
}

TEST_CASE("replay rejects tampered, truncated and mismatched logs") {
  RunConfig cfg = pour_config("cli_replay");
  cfg.params.max_steps = 40;
  std::ostringstream out, err;
  cmd_run(cfg, out, err, "t0");
  const auto dir = cfg.output.parent_path();
  auto lines = read_jsonl(cfg.output);
  REQUIRE(lines.size() > 10);

  auto write = [&](const fs::path& p, const std::vector<json>& ls) {
    std::string text;
    for (const auto& l : ls) text += l.dump() + "\n";
    testing::spit(p, text);
  };
  auto tampered = lines;
  tampered[5]["stage"] = 3;
  write(dir / "tampered.jsonl", tampered);
  std::ostringstream o1, e1;
  CHECK(cmd_replay(dir / "tampered.jsonl", std::nullopt, o1, e1) == kExitError);
  CHECK(e1.str().find("step " + std::to_string(tampered[5]["step"].get<int>())) != std::string::npos);

  const std::string text = testing::slurp(cfg.output);
  testing::spit(dir / "truncated.jsonl", text.substr(0, text.size() / 2));
  std::ostringstream o2, e2;
  CHECK(cmd_replay(dir / "truncated.jsonl", std::nullopt, o2, e2) == kExitError);

  std::ostringstream o3, e3;
  CHECK(cmd_replay(cfg.output, testing::data_path("scenes/pick_place.json"), o3, e3) == kExitError);
  CHECK(e3.str().find("hash") != std::string::npos);
}

TEST_CASE("plan writes a trajectory whose dense steps and costs are consistent") {
  const RunConfig cfg = pour_config("cli_plan");
  const fs::path out_path = testing::scratch_dir("cli_plan") / "plan.json";
  std::ostringstream out, err;
  REQUIRE(cmd_plan(cfg, out_path, out, err) == kExitSuccess);
  const json plan = json::parse(testing::slurp(out_path));
  CHECK(plan["stage"] == 1);
  for (const char* part : {"subgoal", "path"}) {
    double sum = 0.0;
    for (const auto& [k, v] : plan["costs"][part].items()) {
      if (k != "total") sum += v.get<double>();
    }
    CHECK(std::abs(sum - plan["costs"][part]["total"].get<double>()) < 1e-9);
  }
  const auto& dense = plan["dense"][0];
  REQUIRE(dense.size() >= 2);
  for (size_t i = 1; i < dense.size(); ++i) {
    const Pose a = Pose::FromArray(dense[i - 1].get<std::array<double, 7>>());
    const Pose b = Pose::FromArray(dense[i].get<std::array<double, 7>>());
    CHECK((a.position - b.position).norm() <= 0.005 + 1e-9);
    CHECK(rotation_angle(a.orientation, b.orientation) <= M_PI / 180.0 + 1e-9);
  }
}

TEST_CASE("plan with no path budget falls back to a straight line") {
  RunConfig cfg = pour_config("cli_plan_zero");
  cfg.params.budgets.path_first = 0;
  const fs::path out_path = testing::scratch_dir("cli_plan_zero") / "plan.json";
  std::ostringstream out, err;
  REQUIRE(cmd_plan(cfg, out_path, out, err) == kExitSuccess);
  const json plan = json::parse(testing::slurp(out_path));
  const Pose start = Pose::FromArray(plan["start"][0].get<std::array<double, 7>>());
  const Pose goal = Pose::FromArray(plan["subgoal"][0].get<std::array<double, 7>>());
  const auto& control = plan["waypoints"][0];
  CHECK(control.size() == plan["intermediates"].get<size_t>() + 2);
  for (const auto& w : control) {
    const Pose p = Pose::FromArray(w.get<std::array<double, 7>>());
    const Vec3 d = goal.position - start.position;
    const double u = (p.position - start.position).dot(d) / d.squaredNorm();
    CHECK((start.position + u * d - p.position).norm() < 1e-6);
  }
}

TEST_CASE("propose matches the golden candidates and handles bad input") {
  ProposeArgs args;
  args.features = testing::fixture_path("perception/patches.rkfm");
  args.masks = testing::fixture_path("perception/patches.rkms");
  args.workspace = WorkspaceBounds(Vec3(0, -0.5, 0), Vec3(1, 0.5, 0.5));
  std::ostringstream out, err;
  REQUIRE(cmd_propose(args, out, err) == kExitSuccess);
  json got = json::parse(out.str());
  json expected = json::parse(testing::slurp(testing::fixture_path("perception/patches_expected.json")));
  auto key = [](const json& a, const json& b) { return a.dump() < b.dump(); };
  std::sort(got.begin(), got.end(), key);
  std::sort(expected.begin(), expected.end(), key);
  CHECK(got == expected);

  const auto dir = testing::scratch_dir("cli_propose");
  testing::spit(dir / "bad.rkfm", "NOPE" + testing::slurp(args.features).substr(4));
  ProposeArgs bad = args;
  bad.features = dir / "bad.rkfm";
  std::ostringstream o1, e1;
  CHECK(cmd_propose(bad, o1, e1) == kExitError);
  CHECK(!e1.str().empty());

  MaskSet masks = read_masks(args.masks);
  for (auto& m : masks.masks) std::fill(m.begin(), m.end(), 0);
  write_masks(dir / "empty.rkms", masks);
  ProposeArgs empty = args;
  empty.masks = dir / "empty.rkms";
  std::ostringstream o2, e2;
  CHECK(cmd_propose(empty, o2, e2) == kExitSuccess);
  CHECK(json::parse(o2.str()) == json::array());
}

TEST_CASE("track reproduces the clean sequence and stays close on the noisy one") {
  TrackArgs clean;
  clean.frames = testing::fixture_path("perception/track_clean");
  clean.init_keypoints = clean.frames / "init.json";
  clean.output = testing::scratch_dir("cli_track") / "clean.json";
  std::ostringstream out, err;
  REQUIRE(cmd_track(clean, out, err) == kExitSuccess);
  const json got = json::parse(testing::slurp(clean.output));
  const json expected = json::parse(testing::slurp(clean.frames / "expected.json"));
  REQUIRE(got["frames"].size() == expected.size());
  for (size_t t = 0; t < expected.size(); ++t) {
    for (size_t k = 0; k < 3; ++k) {
      for (size_t c = 0; c < 3; ++c) {
        CHECK(std::abs(got["frames"][t]["positions"][k][c].get<double>() - expected[t][k][c].get<double>()) < 1e-9);
      }
    }
  }

  TrackArgs noisy;
  noisy.frames = testing::fixture_path("perception/track_noisy");
  noisy.init_keypoints = noisy.frames / "init.json";
  noisy.output = clean.output.parent_path() / "noisy.json";
  std::ostringstream o2, e2;
  REQUIRE(cmd_track(noisy, o2, e2) == kExitSuccess);
  const json g2 = json::parse(testing::slurp(noisy.output));
  const json truth = json::parse(testing::slurp(noisy.frames / "truth.json"));
  for (size_t t = 0; t < truth.size(); ++t) {
    for (size_t k = 0; k < 3; ++k) {
      const Vec3 p(g2["frames"][t]["positions"][k][0], g2["frames"][t]["positions"][k][1],
                   g2["frames"][t]["positions"][k][2]);
      const Vec3 q(truth[t][k][0], truth[t][k][1], truth[t][k][2]);
      CHECK((p - q).norm() < 0.01);
    }
  }

  TrackArgs missing = clean;
  missing.init_keypoints = clean.frames / "absent.json";
  std::ostringstream o3, e3;
  CHECK(cmd_track(missing, o3, e3) == kExitError);
}
