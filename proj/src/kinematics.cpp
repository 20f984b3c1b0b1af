#include "rekep/kinematics.hpp"

#include "rekep/json_io.hpp"

#include <fstream>

namespace rekep {

namespace {

using JacobianBuffer = Eigen::Matrix<double, 6, Eigen::Dynamic, 0, 6, 16>;

struct ChainState {
  Pose tool;
  JacobianBuffer jac;
};

// Forward pass that also fills the geometric Jacobian.
void evaluate_chain(const KinematicChain& chain, const JointVector& q, ChainState& out, bool with_jacobian) {
  const int n = chain.dof();
  Quat rot = Quat::Identity();
  Vec3 pos = Vec3::Zero();
  Eigen::Matrix<double, 3, Eigen::Dynamic, 0, 3, 16> axes(3, n), origins(3, n);
  for (int i = 0; i < n; ++i) {
    const Joint& j = chain.joints()[static_cast<size_t>(i)];
    pos = rot * j.offset.translation + pos;
    rot = rot * j.offset.rotation;
    axes.col(i) = rot * j.axis;
    origins.col(i) = pos;
    rot = rot * Quat(Eigen::AngleAxisd(q[i], j.axis));
  }
  pos = rot * chain.tool_offset().translation + pos;
  rot = (rot * chain.tool_offset().rotation).normalized();
  out.tool = Pose(pos, rot);
  if (!with_jacobian) return;
  out.jac.resize(6, n);
  for (int i = 0; i < n; ++i) {
    const Vec3 z = axes.col(i);
    out.jac.block<3, 1>(0, i) = z.cross(pos - Vec3(origins.col(i)));
    out.jac.block<3, 1>(3, i) = z;
  }
}

Vec3 rotation_error(const Quat& current, const Quat& target) {
  Quat d = target * current.conjugate();
  if (d.w() < 0) d.coeffs() = -d.coeffs();
  const double s = d.vec().norm();
  if (s < 1e-12) return 2.0 * d.vec();
  return d.vec() / s * (2.0 * std::atan2(s, d.w()));
}

}  // namespace

KinematicChain::KinematicChain(std::vector<Joint> joints, RigidTransform tool_offset, std::string name)
    : joints_(std::move(joints)), tool_offset_(tool_offset), name_(std::move(name)) {
  if (joints_.empty()) throw ChainError("kinematic chain needs at least one joint");
  if (joints_.size() > 16) throw ChainError("kinematic chains are limited to 16 joints");
  for (size_t i = 0; i < joints_.size(); ++i) {
    auto& j = joints_[i];
    if (!(j.lower < j.upper)) throw ChainError("joint " + std::to_string(i) + ": limits require lo < hi");
    const double n = j.axis.norm();
    if (n < 1e-12) throw ChainError("joint " + std::to_string(i) + ": zero axis");
    j.axis /= n;
  }
}

JointVector KinematicChain::clamp(const JointVector& q) const {
  JointVector out = q;
  for (int i = 0; i < dof(); ++i) {
    const auto& j = joints_[static_cast<size_t>(i)];
    out[i] = std::clamp(out[i], j.lower, j.upper);
  }
  return out;
}

bool KinematicChain::within_limits(const JointVector& q) const {
  if (q.size() != dof()) return false;
  for (int i = 0; i < dof(); ++i) {
    const auto& j = joints_[static_cast<size_t>(i)];
    if (q[i] < j.lower || q[i] > j.upper) return false;
  }
  return true;
}

KinematicChain load_chain(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ChainError("cannot open chain file " + path.string());
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    std::vector<Joint> joints;
    for (const auto& jj : j.at("joints")) {
      Joint joint;
      joint.axis = jsonio::vec3(jj.at("axis"), "joint axis");
      joint.offset = jsonio::transform(jj.at("offset"), "joint offset");
      const auto lim = jj.at("limits").get<std::vector<double>>();
      if (lim.size() != 2) throw ChainError("joint limits must have two entries");
      joint.lower = lim[0];
      joint.upper = lim[1];
      joints.push_back(joint);
    }
    KinematicChain chain(std::move(joints), jsonio::transform(j.at("tool_offset"), "tool_offset"),
                         j.value("name", path.stem().string()));
    if (j.contains("initial_q")) {
      const auto q = j.at("initial_q").get<std::vector<double>>();
      if (static_cast<int>(q.size()) != chain.dof()) throw ChainError("initial_q length does not match joints");
      chain.initial_q = Eigen::Map<const JointVector>(q.data(), static_cast<Eigen::Index>(q.size()));
    }
    return chain;
  } catch (const nlohmann::json::exception& e) {
    throw ChainError("chain file " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ChainError("chain file " + path.string() + ": " + e.what());
  }
}

Pose fk(const KinematicChain& chain, const JointVector& q) {
  if (q.size() != chain.dof()) throw std::invalid_argument("fk: joint vector length does not match chain");
  ChainState st;
  evaluate_chain(chain, q, st, false);
  return st.tool;
}

Eigen::Matrix<double, 6, Eigen::Dynamic> jacobian(const KinematicChain& chain, const JointVector& q) {
  if (q.size() != chain.dof()) throw std::invalid_argument("jacobian: joint vector length does not match chain");
  ChainState st;
  evaluate_chain(chain, q, st, true);
  return st.jac;
}

double pose_residual(const Pose& current, const Pose& target, double orientation_weight) {
  const Vec3 ep = target.position - current.position;
  const Vec3 er = rotation_error(current.orientation, target.orientation);
  return std::sqrt(ep.squaredNorm() + orientation_weight * orientation_weight * er.squaredNorm());
}

IkResult ik(const KinematicChain& chain, const Pose& target, const JointVector& q0, const IkOptions& opts) {
  if (q0.size() != chain.dof()) throw std::invalid_argument("ik: seed length does not match chain");
  const int n = chain.dof();
  const double w = opts.orientation_weight;
  JointVector q = chain.clamp(q0);
  IkResult best{q, std::numeric_limits<double>::infinity(), 0};
  ChainState st;
  Eigen::Matrix<double, 6, 1> err;
  const Eigen::Matrix<double, 6, 6> damping =
      opts.damping * opts.damping * Eigen::Matrix<double, 6, 6>::Identity();

  for (int it = 0;; ++it) {
    evaluate_chain(chain, q, st, true);
    err.head<3>() = target.position - st.tool.position;
    err.tail<3>() = w * rotation_error(st.tool.orientation, target.orientation);
    const double res = err.norm();
    if (res < best.residual) best = {q, res, it};
    if (res < opts.tolerance || it >= opts.max_iters) break;

    st.jac.bottomRows<3>() *= w;
    const Eigen::Matrix<double, 6, 6> jjt = st.jac * st.jac.transpose() + damping;
    const Eigen::Matrix<double, 6, 1> y = jjt.ldlt().solve(err);
    Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 16, 1> dq = st.jac.transpose() * y;
    for (int i = 0; i < n; ++i) dq[i] = std::clamp(dq[i], -opts.max_step, opts.max_step);
    q = chain.clamp(q + dq);
  }
  return best;
}

}  // namespace rekep
