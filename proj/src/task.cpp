#include "rekep/task.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace rekep {

using nlohmann::json;

namespace {

[[noreturn]] void schema_error(const std::string& msg) { throw TaskError("task schema: " + msg); }

std::string stage_prefix(int index) { return "stage " + std::to_string(index) + ": "; }

std::vector<std::string> string_list(const json& stage, const char* key, int index) {
  std::vector<std::string> out;
  if (!stage.contains(key)) return out;
  const json& arr = stage.at(key);
  if (!arr.is_array()) schema_error(stage_prefix(index) + key + " must be an array");
  for (const auto& s : arr) {
    if (!s.is_string()) schema_error(stage_prefix(index) + key + " entries must be strings");
    out.push_back(s.get<std::string>());
  }
  return out;
}

int required_int(const json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key) || !obj.at(key).is_number_integer()) schema_error(where + "missing integer '" + key + "'");
  return obj.at(key).get<int>();
}

}  // namespace

TaskSpec task_from_json(const json& j) {
  if (!j.is_object()) schema_error("top level must be an object");
  TaskSpec task;
  task.name = j.value("name", std::string{});
  if (task.name.empty()) schema_error("missing 'name'");
  task.num_arms = required_int(j, "num_arms", "");
  if (task.num_arms != 1 && task.num_arms != 2) schema_error("num_arms must be 1 or 2");
  if (j.contains("num_keypoints")) {
    task.num_keypoints = required_int(j, "num_keypoints", "");
    if (*task.num_keypoints < 1) schema_error("num_keypoints must be positive");
  }
  if (!j.contains("stages") || !j.at("stages").is_array()) schema_error("missing 'stages' array");
  const json& stages = j.at("stages");
  if (stages.empty()) schema_error("'stages' must not be empty");

  dsl::ParseLimits limits{task.num_keypoints, task.num_arms};
  int expected = 1;
  for (const auto& s : stages) {
    if (!s.is_object()) schema_error("stage entries must be objects");
    StageSpec stage;
    stage.index = required_int(s, "index", "stage entry: ");
    if (stage.index != expected) {
      schema_error("stage indices must be contiguous from 1 (expected " + std::to_string(expected) + ", got " +
                   std::to_string(stage.index) + ")");
    }
    ++expected;
    stage.subgoal_sources = string_list(s, "subgoal_constraints", stage.index);
    stage.path_sources = string_list(s, "path_constraints", stage.index);
    auto parse_all = [&](const std::vector<std::string>& src, std::vector<dsl::ConstraintExpr>& dst,
                         const char* kind) {
      for (size_t c = 0; c < src.size(); ++c) {
        try {
          dst.push_back(dsl::parse(src[c], limits));
        } catch (const dsl::ParseError& e) {
          std::ostringstream os;
          os << stage_prefix(stage.index) << kind << " constraint " << c << ": " << e.what();
          throw TaskError(os.str());
        }
      }
    };
    parse_all(stage.subgoal_sources, stage.subgoal_constraints, "sub-goal");
    parse_all(stage.path_sources, stage.path_constraints, "path");

    if (s.contains("grasp") && !s.at("grasp").is_null()) {
      const json& g = s.at("grasp");
      const std::string where = stage_prefix(stage.index) + "grasp: ";
      GraspAnnotation ann{required_int(g, "arm", where), required_int(g, "keypoint", where)};
      if (ann.arm < 0 || ann.arm >= task.num_arms) schema_error(where + "arm index out of range");
      if (ann.keypoint < 0 || (task.num_keypoints && ann.keypoint >= *task.num_keypoints)) {
        schema_error(where + "keypoint index out of range");
      }
      stage.grasp = ann;
    }
    if (s.contains("release") && !s.at("release").is_null()) {
      const std::string where = stage_prefix(stage.index) + "release: ";
      const int arm = required_int(s.at("release"), "arm", where);
      if (arm < 0 || arm >= task.num_arms) schema_error(where + "arm index out of range");
      stage.release = arm;
    }
    if (stage.grasp && stage.release && stage.grasp->arm == *stage.release) {
      schema_error(stage_prefix(stage.index) + "cannot grasp and release the same arm");
    }
    task.stages.push_back(std::move(stage));
  }
  return task;
}

json task_to_json(const TaskSpec& task) {
  json j;
  j["name"] = task.name;
  j["num_arms"] = task.num_arms;
  if (task.num_keypoints) j["num_keypoints"] = *task.num_keypoints;
  j["stages"] = json::array();
  for (const auto& s : task.stages) {
    json js;
    js["index"] = s.index;
    js["subgoal_constraints"] = s.subgoal_sources;
    js["path_constraints"] = s.path_sources;
    if (s.grasp) js["grasp"] = {{"arm", s.grasp->arm}, {"keypoint", s.grasp->keypoint}};
    if (s.release) js["release"] = {{"arm", *s.release}};
    j["stages"].push_back(std::move(js));
  }
  return j;
}

TaskSpec load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw TaskError("cannot open task file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw TaskError("task file " + path.string() + ": " + e.what());
  }
  return task_from_json(j);
}

void bind_task(const TaskSpec& task, int num_keypoints) {
  if (task.num_keypoints && *task.num_keypoints != num_keypoints) {
    throw TaskError("task declares " + std::to_string(*task.num_keypoints) + " keypoints but scene has " +
                    std::to_string(num_keypoints));
  }
  for (const auto& s : task.stages) {
    auto check = [&](const std::vector<dsl::ConstraintExpr>& cs) {
      for (const auto& c : cs) {
        if (c.max_keypoint_index() >= num_keypoints) {
          throw TaskError(stage_prefix(s.index) + "references k[" + std::to_string(c.max_keypoint_index()) +
                          "] but the scene has " + std::to_string(num_keypoints) + " keypoints");
        }
      }
    };
    check(s.subgoal_constraints);
    check(s.path_constraints);
    if (s.grasp && s.grasp->keypoint >= num_keypoints) {
      throw TaskError(stage_prefix(s.index) + "grasp keypoint out of range");
    }
  }
}

}  // namespace rekep
