// Serial-chain forward kinematics and damped least-squares IK.
//
// Chain file schema (JSON):
//   {
//     "name": "reference7",
//     "joints": [{"axis": [0, 0, 1], "offset": [7 numbers], "limits": [lo, hi]}, ...],
//     "tool_offset": [7 numbers],
//     "initial_q": [...]                      // optional
//   }
// Each joint applies its fixed offset from the parent frame, then rotates about `axis`.
#pragma once

#include "rekep/geometry.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace rekep {

using JointVector = Eigen::VectorXd;

struct Joint {
  Vec3 axis = Vec3::UnitZ();
  RigidTransform offset;
  double lower = -M_PI;
  double upper = M_PI;
};

class KinematicChain {
 public:
  KinematicChain() = default;
  KinematicChain(std::vector<Joint> joints, RigidTransform tool_offset, std::string name = {});

  int dof() const { return static_cast<int>(joints_.size()); }
  const std::vector<Joint>& joints() const { return joints_; }
  const RigidTransform& tool_offset() const { return tool_offset_; }
  const std::string& name() const { return name_; }

  std::optional<JointVector> initial_q;

  JointVector clamp(const JointVector& q) const;
  bool within_limits(const JointVector& q) const;

 private:
  std::vector<Joint> joints_;
  RigidTransform tool_offset_;
  std::string name_;
};

class ChainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

KinematicChain load_chain(const std::filesystem::path& path);

Pose fk(const KinematicChain& chain, const JointVector& q);

/// Geometric Jacobian (rows: linear velocity, angular velocity) at the tool point.
Eigen::Matrix<double, 6, Eigen::Dynamic> jacobian(const KinematicChain& chain, const JointVector& q);

struct IkOptions {
  int max_iters = 50;
  double damping = 0.05;
  double max_step = 0.2;           // rad per joint per iteration
  double orientation_weight = 0.5;
  double tolerance = 1e-12;        // stop once the residual drops below this
};

struct IkResult {
  JointVector q;
  double residual = 0.0;
  int iterations = 0;
};

/// Weighted 6-D pose error norm: |position error| and orientation_weight * rotation-vector error.
double pose_residual(const Pose& current, const Pose& target, double orientation_weight);

/// Damped least squares from q0. Joint limits are enforced after every step and the
/// best iterate seen is returned. Unreachable targets yield a large residual.
IkResult ik(const KinematicChain& chain, const Pose& target, const JointVector& q0, const IkOptions& opts = {});

inline double reachability_cost(const KinematicChain& chain, const Pose& target, const JointVector& q_seed,
                                const IkOptions& opts = {}) {
  return ik(chain, target, q_seed, opts).residual;
}

}  // namespace rekep
