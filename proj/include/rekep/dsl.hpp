// Constraint expression language.
//
// A constraint is a scalar expression over keypoints k[i] and end-effector
// points ee[j]; it is satisfied when it evaluates to <= 0. Grammar:
//
//   expr   := term (('+' | '-') term)*
//   term   := factor (('*' | '/') factor)*
//   factor := '-'? atom
//   atom   := NUMBER | 'k[' INT ']' | 'ee[' INT ']' | 'vec(' expr ',' expr ',' expr ')'
//           | FUNC '(' args ')' | '(' expr ')'
//
// FUNC is one of norm, dot, cross, angle, abs, min, max, x, y, z.
#pragma once

#include "rekep/geometry.hpp"

#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rekep {

/// K x 3 keypoint positions, one row per keypoint.
using KeypointArray = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

namespace dsl {

enum class Type { Scalar, Vector };

enum class Op { Number, VectorLiteral, Keypoint, EndEffector, Neg, Add, Sub, Mul, Div, MakeVec, Call };

enum class Func { Norm, Dot, Cross, Angle, Abs, Min, Max, X, Y, Z };

std::string_view func_name(Func f);

/// Typed syntax tree node. Source positions are carried for diagnostics but
/// do not take part in equality.
struct Node {
  Op op = Op::Number;
  Type type = Type::Scalar;
  double number = 0.0;
  Vec3 vector = Vec3::Zero();
  int index = 0;
  Func func = Func::Norm;
  std::vector<Node> args;
  int line = 1;
  int column = 1;

  bool operator==(const Node& other) const;
};

class ParseError : public std::runtime_error {
 public:
  enum class Kind { Syntax, Type, Index };
  ParseError(Kind kind, int line, int column, const std::string& message);
  Kind kind() const { return kind_; }
  int line() const { return line_; }
  int column() const { return column_; }

 private:
  Kind kind_;
  int line_;
  int column_;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Optional upper bounds for k[] and ee[] indices, checked while parsing.
struct ParseLimits {
  std::optional<int> num_keypoints;
  std::optional<int> num_arms;
};

class ConstraintExpr {
 public:
  ConstraintExpr() = default;
  explicit ConstraintExpr(Node root);

  const Node& root() const { return root_; }
  /// -1 when the expression references no keypoint / end-effector.
  int max_keypoint_index() const { return max_keypoint_; }
  int max_arm_index() const { return max_arm_; }

  double evaluate(const KeypointArray& keypoints, std::span<const Vec3> ee_points) const;

  bool operator==(const ConstraintExpr& other) const { return root_ == other.root_; }

 private:
  struct Instr {
    Op op;
    Func func;
    int arg;
    double number;
    Vec3 vector;
  };

  void compile(const Node& node);

  Node root_;
  std::vector<Instr> program_;
  int max_depth_ = 0;
  int max_keypoint_ = -1;
  int max_arm_ = -1;
};

/// Parse and type-check. Throws ParseError with a 1-based line/column.
ConstraintExpr parse(std::string_view text, const ParseLimits& limits = {});

/// Render with the minimal parenthesization that parses back to the same tree.
std::string print(const Node& node);
inline std::string print(const ConstraintExpr& e) { return print(e.root()); }

inline double evaluate(const ConstraintExpr& e, const KeypointArray& keypoints, std::span<const Vec3> ee_points) {
  return e.evaluate(keypoints, ee_points);
}

inline bool satisfied(const ConstraintExpr& e, const KeypointArray& keypoints, std::span<const Vec3> ee_points,
                      double slack = 0.0) {
  return e.evaluate(keypoints, ee_points) <= slack;
}

}  // namespace dsl
}  // namespace rekep
