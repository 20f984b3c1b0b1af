#include "rekep/config.hpp"

#include <fstream>

namespace rekep {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path resolve(const json& v, const fs::path& base, const char* what) {
  if (!v.is_string()) throw ConfigError(std::string("'") + what + "' must be a path string");
  const fs::path p = v.get<std::string>();
  return (p.is_relative() && !base.empty() ? base / p : p).lexically_normal();
}

void require_file(const fs::path& p, const char* what) {
  if (p.empty()) throw ConfigError(std::string("config is missing the ") + what + " path");
  if (!fs::is_regular_file(p)) throw ConfigError(std::string(what) + " file not found: " + p.string());
}

}  // namespace

void RunConfig::validate() const {
  require_file(task, "task");
  require_file(scene, "scene");
  if (chains.empty()) throw ConfigError("config lists no kinematic chain");
  for (const auto& c : chains) require_file(c, "chain");
  try {
    params.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "task") c.task = resolve(v, base_dir, "task");
    else if (key == "scene") c.scene = resolve(v, base_dir, "scene");
    else if (key == "chain") c.chains = {resolve(v, base_dir, "chain")};
    else if (key == "chains") {
      if (!v.is_array()) throw ConfigError("'chains' must be an array of paths");
      c.chains.clear();
      for (const auto& p : v) c.chains.push_back(resolve(p, base_dir, "chains"));
    } else if (key == "output") c.output = resolve(v, base_dir, "output");
    else if (key == "seed" || key == "params" || key == "weights") {
      // applied below so that "seed" may appear at either level
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  try {
    if (j.contains("params")) {
      if (j["params"].contains("seed")) c.seed_from_file = true;
      update_from_json(c.params, j["params"]);
    }
    if (j.contains("weights")) update_from_json(c.params.weights, j["weights"]);
    if (j.contains("seed")) {
      update_from_json(c.params, json{{"seed", j["seed"]}});
      c.seed_from_file = true;
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

std::vector<std::string> override_keys() {
  std::vector<std::string> keys;
  const json defaults = to_json(ExecutorParams{});
  for (const auto& [k, v] : defaults.items()) {
    if (k == "budgets" || k == "weights") {
      for (const auto& [inner, _] : v.items()) keys.push_back(inner);
    } else if (v.is_number() && k != "seed") {
      keys.push_back(k);
    }
  }
  return keys;
}

void apply_overrides(RunConfig& config, const json& flat) {
  const json defaults = to_json(ExecutorParams{});
  json params = json::object();
  json weights = json::object();
  for (const auto& [key, v] : flat.items()) {
    if (defaults["budgets"].contains(key)) params["budgets"][key] = v;
    else if (defaults["weights"].contains(key)) weights[key] = v;
    else if (defaults.contains(key) && key != "budgets" && key != "weights") params[key] = v;
    else throw ConfigError("unknown parameter '" + key + "'");
  }
  try {
    update_from_json(config.params, params);
    update_from_json(config.params.weights, weights);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

std::uint64_t parse_seed(const std::string& text) {
  size_t used = 0;
  unsigned long long v = 0;
  try {
    if (!text.empty() && text[0] == '-') throw std::invalid_argument("negative");
    v = std::stoull(text, &used, 10);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size()) throw ConfigError("seed must be a non-negative integer, got '" + text + "'");
  return static_cast<std::uint64_t>(v);
}

void resolve_seed(RunConfig& config, std::optional<std::uint64_t> flag, const char* env_value) {
  if (flag) {
    config.params.seed = *flag;
  } else if (!config.seed_from_file && env_value && *env_value) {
    config.params.seed = parse_seed(env_value);
  }
}

}  // namespace rekep
