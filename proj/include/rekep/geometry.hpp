// Rigid-body primitives shared by the planner, simulator and perception code.
//
// Everything here is templated on the scalar type in the usual Eigen fashion;
// the rest of the library uses the double aliases at the bottom of the file.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace rekep {

template <typename Scalar>
using Vec3T = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using QuatT = Eigen::Quaternion<Scalar>;

/// Frame transform: x -> rotation * x + translation.
template <typename Scalar>
struct RigidTransformT {
  QuatT<Scalar> rotation = QuatT<Scalar>::Identity();
  Vec3T<Scalar> translation = Vec3T<Scalar>::Zero();

  RigidTransformT() = default;
  RigidTransformT(const QuatT<Scalar>& q, const Vec3T<Scalar>& t)
      : rotation(q.normalized()), translation(t) {}

  static RigidTransformT Identity() { return {}; }
  static RigidTransformT Translation(const Vec3T<Scalar>& t) {
    return {QuatT<Scalar>::Identity(), t};
  }
  static RigidTransformT Rotation(const QuatT<Scalar>& q) {
    return {q, Vec3T<Scalar>::Zero()};
  }
  static RigidTransformT AxisAngle(Scalar angle, const Vec3T<Scalar>& axis) {
    return Rotation(QuatT<Scalar>(Eigen::AngleAxis<Scalar>(angle, axis.normalized())));
  }

  Eigen::Matrix<Scalar, 4, 4> matrix() const {
    Eigen::Matrix<Scalar, 4, 4> m = Eigen::Matrix<Scalar, 4, 4>::Identity();
    m.template topLeftCorner<3, 3>() = rotation.toRotationMatrix();
    m.template topRightCorner<3, 1>() = translation;
    return m;
  }
};

/// Result applies `b` first, then `a`.
template <typename Scalar>
RigidTransformT<Scalar> compose(const RigidTransformT<Scalar>& a, const RigidTransformT<Scalar>& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

template <typename Scalar>
RigidTransformT<Scalar> inverse(const RigidTransformT<Scalar>& t) {
  const QuatT<Scalar> qi = t.rotation.conjugate();
  return {qi, -(qi * t.translation)};
}

template <typename Scalar, typename Derived>
Vec3T<Scalar> apply(const RigidTransformT<Scalar>& t, const Eigen::MatrixBase<Derived>& p) {
  return t.rotation * p + t.translation;
}

/// Rotation matrix for intrinsic XYZ Euler angles: R = Rx(a) * Ry(b) * Rz(c).
template <typename Scalar>
QuatT<Scalar> quat_from_euler_xyz(const Vec3T<Scalar>& e) {
  using AA = Eigen::AngleAxis<Scalar>;
  QuatT<Scalar> q = QuatT<Scalar>(AA(e.x(), Vec3T<Scalar>::UnitX())) *
                    QuatT<Scalar>(AA(e.y(), Vec3T<Scalar>::UnitY())) *
                    QuatT<Scalar>(AA(e.z(), Vec3T<Scalar>::UnitZ()));
  return q.normalized();
}

/// Inverse of quat_from_euler_xyz with a in [-pi, pi], b in [-pi/2, pi/2], c in [-pi, pi].
/// At gimbal lock c is pinned to zero.
template <typename Scalar>
Vec3T<Scalar> euler_xyz_from_quat(const QuatT<Scalar>& q) {
  const Eigen::Matrix<Scalar, 3, 3> r = q.normalized().toRotationMatrix();
  using std::asin;
  using std::atan2;
  const Scalar s = std::clamp(r(0, 2), Scalar(-1), Scalar(1));
  const Scalar b = asin(s);
  if (std::abs(s) < Scalar(1) - Scalar(1e-12)) {
    return {atan2(-r(1, 2), r(2, 2)), b, atan2(-r(0, 1), r(0, 0))};
  }
  return {atan2(r(2, 1), r(1, 1)), b, Scalar(0)};
}

/// Geodesic angle between two orientations, radians in [0, pi].
template <typename Scalar>
Scalar rotation_angle(const QuatT<Scalar>& a, const QuatT<Scalar>& b) {
  const QuatT<Scalar> d = a.normalized().conjugate() * b.normalized();
  return Scalar(2) * std::atan2(d.vec().norm(), std::abs(d.w()));
}

/// End-effector pose in the world frame.
template <typename Scalar>
struct PoseT {
  Vec3T<Scalar> position = Vec3T<Scalar>::Zero();
  QuatT<Scalar> orientation = QuatT<Scalar>::Identity();

  PoseT() = default;
  PoseT(const Vec3T<Scalar>& p, const QuatT<Scalar>& q) : position(p), orientation(q.normalized()) {}

  static PoseT FromEuler(const Vec3T<Scalar>& p, const Vec3T<Scalar>& euler_xyz) {
    return {p, quat_from_euler_xyz(euler_xyz)};
  }
  static PoseT FromFrame(const RigidTransformT<Scalar>& t) { return {t.translation, t.rotation}; }

  Vec3T<Scalar> euler_xyz() const { return euler_xyz_from_quat(orientation); }
  RigidTransformT<Scalar> frame() const { return {orientation, position}; }

  /// [px, py, pz, qw, qx, qy, qz]
  std::array<Scalar, 7> to_array() const {
    return {position.x(), position.y(), position.z(), orientation.w(),
            orientation.x(), orientation.y(), orientation.z()};
  }
  static PoseT FromArray(const std::array<Scalar, 7>& a) {
    return {Vec3T<Scalar>(a[0], a[1], a[2]), QuatT<Scalar>(a[3], a[4], a[5], a[6])};
  }
};

/// Transform taking points expressed relative to `from` onto the same points relative to `to`,
/// i.e. compose(result, from.frame()) == to.frame().
template <typename Scalar>
RigidTransformT<Scalar> delta_transform(const PoseT<Scalar>& from, const PoseT<Scalar>& to) {
  return compose(to.frame(), inverse(from.frame()));
}

/// Linear in position, shortest-arc slerp in orientation.
template <typename Scalar>
PoseT<Scalar> interpolate(const PoseT<Scalar>& a, const PoseT<Scalar>& b, Scalar s) {
  if (!(s >= Scalar(0) && s <= Scalar(1))) {
    throw std::invalid_argument("interpolate: parameter must lie in [0, 1]");
  }
  if (s == Scalar(0)) return a;
  if (s == Scalar(1)) return b;
  return {a.position + s * (b.position - a.position), a.orientation.slerp(s, b.orientation)};
}

template <typename Scalar>
struct WorkspaceBoundsT {
  Vec3T<Scalar> min = Vec3T<Scalar>::Zero();
  Vec3T<Scalar> max = Vec3T<Scalar>::Ones();

  WorkspaceBoundsT() = default;
  WorkspaceBoundsT(const Vec3T<Scalar>& lo, const Vec3T<Scalar>& hi) : min(lo), max(hi) {
    if (!(min.array() < max.array()).all()) {
      throw std::invalid_argument("workspace bounds require min < max componentwise");
    }
  }

  template <typename Derived>
  bool contains(const Eigen::MatrixBase<Derived>& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

/// Per-dimension bounds of a flattened decision vector, mapped affinely onto [-1, 1].
template <typename Scalar>
class DecisionBoxT {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  DecisionBoxT() = default;
  DecisionBoxT(Vector lower, Vector upper) : lower_(std::move(lower)), upper_(std::move(upper)) {
    if (lower_.size() != upper_.size() || !(lower_.array() < upper_.array()).all()) {
      throw std::invalid_argument("decision box requires lower < upper componentwise");
    }
  }

  Eigen::Index size() const { return lower_.size(); }
  const Vector& lower() const { return lower_; }
  const Vector& upper() const { return upper_; }

  template <typename Derived>
  Vector normalize(const Eigen::MatrixBase<Derived>& x) const {
    return (Scalar(2) * (x - lower_).array() / (upper_ - lower_).array() - Scalar(1)).matrix();
  }

  template <typename Derived>
  Vector denormalize(const Eigen::MatrixBase<Derived>& u) const {
    return (lower_.array() + (u.array() + Scalar(1)) * Scalar(0.5) * (upper_ - lower_).array()).matrix();
  }

  /// Concatenation, used to stack per-arm boxes.
  friend DecisionBoxT stack(const DecisionBoxT& a, const DecisionBoxT& b) {
    Vector lo(a.size() + b.size()), hi(a.size() + b.size());
    lo << a.lower_, b.lower_;
    hi << a.upper_, b.upper_;
    return {lo, hi};
  }

 private:
  Vector lower_;
  Vector upper_;
};

using Vec3 = Vec3T<double>;
using Quat = QuatT<double>;
using RigidTransform = RigidTransformT<double>;
using Pose = PoseT<double>;
using WorkspaceBounds = WorkspaceBoundsT<double>;
using DecisionBox = DecisionBoxT<double>;

}  // namespace rekep
