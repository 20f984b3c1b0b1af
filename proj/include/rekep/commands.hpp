// Subcommands behind the rekep executable. Each returns the process exit code:
// 0 success, 1 error (diagnostic on `err`), 2 timeout.
#pragma once

#include "rekep/config.hpp"
#include "rekep/perception.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace rekep {

constexpr int kExitSuccess = 0;
constexpr int kExitError = 1;
constexpr int kExitTimeout = 2;

/// Runs the closed loop, writes the JSONL log to config.output (when set) and prints a summary.
int cmd_run(const RunConfig& config, std::ostream& out, std::ostream& err, const std::string& timestamp = {});

/// One sub-goal and path solve from the initial state of stage 1. Writes the sub-goal, the
/// control and dense poses, and both cost breakdowns as JSON.
int cmd_plan(const RunConfig& config, const std::filesystem::path& output, std::ostream& out, std::ostream& err);

struct ProposeArgs {
  std::filesystem::path features;
  std::filesystem::path masks;
  WorkspaceBounds workspace;
  ProposeOptions options;
  std::filesystem::path output;  // empty: print only
};

/// Prints the candidates as a JSON array of {position, group, cluster_size}.
int cmd_propose(const ProposeArgs& args, std::ostream& out, std::ostream& err);

struct TrackArgs {
  std::filesystem::path frames;          // directory of *.rkfc files, tracked in name order
  std::filesystem::path init_keypoints;  // JSON K x 3 array (or {"keypoints": ...})
  std::filesystem::path output;          // empty: print only
  TrackerOptions options;
};

/// The tracker is initialized on the first frame at the given keypoints, then every frame is tracked.
/// Output: {"frames": [{"frame", "positions", "stale"}, ...]}.
int cmd_track(const TrackArgs& args, std::ostream& out, std::ostream& err);

/// Re-validates an execution log: record structure, step continuity, stage transitions against the
/// logged events, and footer totals. With `scene`, the header hash must match the scene file.
int cmd_replay(const std::filesystem::path& log, const std::optional<std::filesystem::path>& scene,
               std::ostream& out, std::ostream& err);

}  // namespace rekep
