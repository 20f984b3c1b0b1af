// Run configuration files.
//
//   {
//     "task": "../tasks/pour.json",
//     "scene": "../scenes/pour.json",
//     "chains": ["../chains/reference7.json"],     (or "chain": "...")
//     "output": "pour.jsonl",
//     "seed": 3,
//     "params": { "epsilon_pos": 0.0005, "budgets": { "path_refine": 5000 } },
//     "weights": { "collision": 5.0 }
//   }
//
// Relative paths resolve against the directory holding the config file.
#pragma once

#include "rekep/executor.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <vector>

namespace rekep {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::filesystem::path task;
  std::filesystem::path scene;
  std::vector<std::filesystem::path> chains;
  std::filesystem::path output;  // empty: no log file
  ExecutorParams params;         // weights and seed live here
  bool seed_from_file = false;

  /// Referenced files must exist and parameters must be in range. Throws ConfigError.
  void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Override keys mirror ExecutorParams / CostWeights field names, flattened: "epsilon_pos",
/// "path_refine", "collision", ... Unknown keys throw ConfigError.
void apply_overrides(RunConfig& config, const nlohmann::json& flat);

/// Every overridable numeric field name, in a fixed order.
std::vector<std::string> override_keys();

/// Seed precedence: command-line flag, then the config file, then RK_SEED, then 0.
void resolve_seed(RunConfig& config, std::optional<std::uint64_t> flag, const char* env_value);

std::uint64_t parse_seed(const std::string& text);

}  // namespace rekep
