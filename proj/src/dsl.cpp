#include "rekep/dsl.hpp"

#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <sstream>

namespace rekep::dsl {

std::string_view func_name(Func f) {
  switch (f) {
    case Func::Norm: return "norm";
    case Func::Dot: return "dot";
    case Func::Cross: return "cross";
    case Func::Angle: return "angle";
    case Func::Abs: return "abs";
    case Func::Min: return "min";
    case Func::Max: return "max";
    case Func::X: return "x";
    case Func::Y: return "y";
    case Func::Z: return "z";
  }
  return "?";
}

bool Node::operator==(const Node& o) const {
  if (op != o.op || type != o.type) return false;
  switch (op) {
    case Op::Number: return number == o.number;
    case Op::VectorLiteral: return vector == o.vector;
    case Op::Keypoint:
    case Op::EndEffector: return index == o.index;
    case Op::Call:
      if (func != o.func) return false;
      break;
    default: break;
  }
  return args == o.args;
}

namespace {

std::string format_position(int line, int column, const std::string& message) {
  std::ostringstream os;
  os << "line " << line << ", column " << column << ": " << message;
  return os.str();
}

}  // namespace

ParseError::ParseError(Kind kind, int line, int column, const std::string& message)
    : std::runtime_error(format_position(line, column, message)), kind_(kind), line_(line), column_(column) {}

namespace {

enum class Tok { Number, Ident, LBracket, RBracket, LParen, RParen, Comma, Plus, Minus, Star, Slash, End };

struct Token {
  Tok kind;
  std::string_view text;
  int line;
  int column;
};

class Lexer {
 public:
  explicit Lexer(std::string_view src) : src_(src) {}

  Token next() {
    skip_space();
    const int line = line_, col = col_;
    if (pos_ >= src_.size()) return {Tok::End, {}, line, col};
    const char c = src_[pos_];
    auto single = [&](Tok k) {
      advance(1);
      return Token{k, src_.substr(pos_ - 1, 1), line, col};
    };
    switch (c) {
      case '[': return single(Tok::LBracket);
      case ']': return single(Tok::RBracket);
      case '(': return single(Tok::LParen);
      case ')': return single(Tok::RParen);
      case ',': return single(Tok::Comma);
      case '+': return single(Tok::Plus);
      case '-': return single(Tok::Minus);
      case '*': return single(Tok::Star);
      case '/': return single(Tok::Slash);
      default: break;
    }
    const size_t start = pos_;
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      while (pos_ < src_.size() && (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.')) {
        advance(1);
      }
      if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
        size_t look = pos_ + 1;
        if (look < src_.size() && (src_[look] == '+' || src_[look] == '-')) ++look;
        if (look < src_.size() && std::isdigit(static_cast<unsigned char>(src_[look]))) {
          advance(look - pos_);
          while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) advance(1);
        }
      }
      return {Tok::Number, src_.substr(start, pos_ - start), line, col};
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
        advance(1);
      }
      return {Tok::Ident, src_.substr(start, pos_ - start), line, col};
    }
    throw ParseError(ParseError::Kind::Syntax, line, col, std::string("unexpected character '") + c + "'");
  }

 private:
  void advance(size_t n) {
    for (size_t i = 0; i < n; ++i) {
      if (src_[pos_] == '\n') {
        ++line_;
        col_ = 1;
      } else {
        ++col_;
      }
      ++pos_;
    }
  }
  void skip_space() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) advance(1);
  }

  std::string_view src_;
  size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

std::string describe(const Token& t) {
  if (t.kind == Tok::End) return "end of input";
  return "'" + std::string(t.text) + "'";
}

class Parser {
 public:
  Parser(std::string_view src, const ParseLimits& limits) : lexer_(src), limits_(limits) { cur_ = lexer_.next(); }

  Node parse_root() {
    Node n = expr();
    if (cur_.kind != Tok::End) syntax_error("unexpected " + describe(cur_));
    if (n.type != Type::Scalar) type_error(n, "constraint must be scalar-valued");
    return n;
  }

 private:
  [[noreturn]] void syntax_error(const std::string& msg) const {
    throw ParseError(ParseError::Kind::Syntax, cur_.line, cur_.column, msg);
  }
  [[noreturn]] static void type_error(const Node& at, const std::string& msg) {
    throw ParseError(ParseError::Kind::Type, at.line, at.column, msg);
  }

  void bump() { cur_ = lexer_.next(); }

  Token expect(Tok kind, const char* what) {
    if (cur_.kind != kind) syntax_error(std::string("expected ") + what + ", found " + describe(cur_));
    Token t = cur_;
    bump();
    return t;
  }

  static Node make(Op op, const Token& at) {
    Node n;
    n.op = op;
    n.line = at.line;
    n.column = at.column;
    return n;
  }

  Node binary(Op op, const Token& at, Node lhs, Node rhs) {
    Node n = make(op, at);
    const Type l = lhs.type, r = rhs.type;
    switch (op) {
      case Op::Add:
      case Op::Sub:
        if (l != r) type_error(n, "cannot add or subtract a scalar and a vector");
        n.type = l;
        break;
      case Op::Mul:
        if (l == Type::Vector && r == Type::Vector) type_error(n, "vector * vector is undefined; use dot or cross");
        n.type = (l == Type::Vector || r == Type::Vector) ? Type::Vector : Type::Scalar;
        break;
      case Op::Div:
        if (r != Type::Scalar) type_error(n, "divisor must be scalar");
        n.type = l;
        break;
      default: break;
    }
    n.args.push_back(std::move(lhs));
    n.args.push_back(std::move(rhs));
    return n;
  }

  Node expr() {
    Node lhs = term();
    while (cur_.kind == Tok::Plus || cur_.kind == Tok::Minus) {
      const Token op = cur_;
      bump();
      Node rhs = term();
      lhs = binary(op.kind == Tok::Plus ? Op::Add : Op::Sub, op, std::move(lhs), std::move(rhs));
    }
    return lhs;
  }

  Node term() {
    Node lhs = factor();
    while (cur_.kind == Tok::Star || cur_.kind == Tok::Slash) {
      const Token op = cur_;
      bump();
      Node rhs = factor();
      lhs = binary(op.kind == Tok::Star ? Op::Mul : Op::Div, op, std::move(lhs), std::move(rhs));
    }
    return lhs;
  }

  Node factor() {
    if (cur_.kind == Tok::Minus) {
      const Token op = cur_;
      bump();
      Node inner = atom();
      Node n = make(Op::Neg, op);
      n.type = inner.type;
      n.args.push_back(std::move(inner));
      return n;
    }
    return atom();
  }

  double number_value(const Token& t) const {
    double v = 0.0;
    const auto* first = t.text.data();
    const auto* last = first + t.text.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last) {
      throw ParseError(ParseError::Kind::Syntax, t.line, t.column, "malformed number '" + std::string(t.text) + "'");
    }
    return v;
  }

  int index_value() {
    const Token t = expect(Tok::Number, "integer index");
    int v = 0;
    auto [ptr, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
    if (ec != std::errc() || ptr != t.text.data() + t.text.size() || v < 0) {
      throw ParseError(ParseError::Kind::Syntax, t.line, t.column, "index must be a non-negative integer");
    }
    return v;
  }

  Node reference(const Token& name, Op op) {
    Node n = make(op, name);
    n.type = Type::Vector;
    expect(Tok::LBracket, "'['");
    const int line = cur_.line, col = cur_.column;
    n.index = index_value();
    expect(Tok::RBracket, "']'");
    const auto& bound = op == Op::Keypoint ? limits_.num_keypoints : limits_.num_arms;
    if (bound && n.index >= *bound) {
      std::ostringstream os;
      os << (op == Op::Keypoint ? "keypoint index " : "end-effector index ") << n.index << " out of range (only "
         << *bound << " declared)";
      throw ParseError(ParseError::Kind::Index, line, col, os.str());
    }
    return n;
  }

  std::vector<Node> arguments() {
    std::vector<Node> args;
    expect(Tok::LParen, "'('");
    if (cur_.kind != Tok::RParen) {
      args.push_back(expr());
      while (cur_.kind == Tok::Comma) {
        bump();
        args.push_back(expr());
      }
    }
    expect(Tok::RParen, "')'");
    return args;
  }

  static bool literal_component(const Node& n, double& out) {
    if (n.op == Op::Number) {
      out = n.number;
      return true;
    }
    if (n.op == Op::Neg && n.args[0].op == Op::Number) {
      out = -n.args[0].number;
      return true;
    }
    return false;
  }

  Node make_vec(const Token& name) {
    Node n = make(Op::MakeVec, name);
    n.type = Type::Vector;
    n.args = arguments();
    if (n.args.size() != 3) type_error(n, "vec takes exactly 3 arguments");
    for (const auto& a : n.args) {
      if (a.type != Type::Scalar) type_error(a, "vec components must be scalar");
    }
    Vec3 v;
    if (literal_component(n.args[0], v.x()) && literal_component(n.args[1], v.y()) &&
        literal_component(n.args[2], v.z())) {
      Node lit = make(Op::VectorLiteral, name);
      lit.type = Type::Vector;
      lit.vector = v;
      return lit;
    }
    return n;
  }

  Node call(const Token& name, Func f) {
    Node n = make(Op::Call, name);
    n.func = f;
    n.args = arguments();
    const std::string fname(func_name(f));
    auto want = [&](size_t count, Type t) {
      if (n.args.size() != count) {
        type_error(n, fname + " takes " + std::to_string(count) + " argument(s)");
      }
      for (const auto& a : n.args) {
        if (a.type != t) type_error(a, fname + " expects " + (t == Type::Scalar ? "scalar" : "vector") + " arguments");
      }
    };
    switch (f) {
      case Func::Norm:
      case Func::X:
      case Func::Y:
      case Func::Z:
        want(1, Type::Vector);
        n.type = Type::Scalar;
        break;
      case Func::Dot:
      case Func::Angle:
        want(2, Type::Vector);
        n.type = Type::Scalar;
        break;
      case Func::Cross:
        want(2, Type::Vector);
        n.type = Type::Vector;
        break;
      case Func::Abs:
        want(1, Type::Scalar);
        n.type = Type::Scalar;
        break;
      case Func::Min:
      case Func::Max:
        if (n.args.size() < 2) type_error(n, fname + " takes at least 2 arguments");
        want(n.args.size(), Type::Scalar);
        n.type = Type::Scalar;
        break;
    }
    return n;
  }

  Node atom() {
    const Token t = cur_;
    switch (t.kind) {
      case Tok::Number: {
        bump();
        Node n = make(Op::Number, t);
        n.number = number_value(t);
        return n;
      }
      case Tok::LParen: {
        bump();
        Node n = expr();
        expect(Tok::RParen, "')'");
        return n;
      }
      case Tok::Ident: {
        bump();
        if (t.text == "k") return reference(t, Op::Keypoint);
        if (t.text == "ee") return reference(t, Op::EndEffector);
        if (t.text == "vec") return make_vec(t);
        static constexpr std::array funcs = {Func::Norm, Func::Dot, Func::Cross, Func::Angle, Func::Abs,
                                             Func::Min,  Func::Max, Func::X,     Func::Y,     Func::Z};
        for (Func f : funcs) {
          if (t.text == func_name(f)) return call(t, f);
        }
        throw ParseError(ParseError::Kind::Syntax, t.line, t.column, "unknown identifier '" + std::string(t.text) + "'");
      }
      default: syntax_error("unexpected " + describe(t));
    }
  }

  Lexer lexer_;
  ParseLimits limits_;
  Token cur_{};
};

int precedence(const Node& n) {
  switch (n.op) {
    case Op::Add:
    case Op::Sub: return 1;
    case Op::Mul:
    case Op::Div: return 2;
    case Op::Neg: return 3;
    case Op::Number: return n.number < 0 ? 3 : 4;
    default: return 4;
  }
}

void format_number(std::string& out, double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), ptr);
}

void print_into(std::string& out, const Node& n);

void print_child(std::string& out, const Node& child, bool wrap) {
  if (wrap) out += '(';
  print_into(out, child);
  if (wrap) out += ')';
}

void print_into(std::string& out, const Node& n) {
  switch (n.op) {
    case Op::Number: format_number(out, n.number); return;
    case Op::VectorLiteral:
      out += "vec(";
      format_number(out, n.vector.x());
      out += ", ";
      format_number(out, n.vector.y());
      out += ", ";
      format_number(out, n.vector.z());
      out += ')';
      return;
    case Op::Keypoint: out += "k[" + std::to_string(n.index) + "]"; return;
    case Op::EndEffector: out += "ee[" + std::to_string(n.index) + "]"; return;
    case Op::Neg:
      out += '-';
      print_child(out, n.args[0], precedence(n.args[0]) < 4);
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const int p = precedence(n);
      print_child(out, n.args[0], precedence(n.args[0]) < p);
      out += n.op == Op::Add ? " + " : n.op == Op::Sub ? " - " : n.op == Op::Mul ? " * " : " / ";
      print_child(out, n.args[1], precedence(n.args[1]) <= p);
      return;
    }
    case Op::MakeVec:
    case Op::Call: {
      out += n.op == Op::MakeVec ? std::string_view("vec") : func_name(n.func);
      out += '(';
      for (size_t i = 0; i < n.args.size(); ++i) {
        if (i) out += ", ";
        print_into(out, n.args[i]);
      }
      out += ')';
      return;
    }
  }
}

}  // namespace

ConstraintExpr parse(std::string_view text, const ParseLimits& limits) {
  Parser p(text, limits);
  return ConstraintExpr(p.parse_root());
}

std::string print(const Node& node) {
  std::string out;
  print_into(out, node);
  return out;
}

ConstraintExpr::ConstraintExpr(Node root) : root_(std::move(root)) {
  compile(root_);
  int depth = 0;
  for (const auto& ins : program_) {
    switch (ins.op) {
      case Op::Number:
      case Op::VectorLiteral:
      case Op::Keypoint:
      case Op::EndEffector: ++depth; break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div: --depth; break;
      case Op::MakeVec: depth -= 2; break;
      case Op::Call: depth -= ins.arg - 1; break;
      case Op::Neg: break;
    }
    max_depth_ = std::max(max_depth_, depth);
  }
}

void ConstraintExpr::compile(const Node& n) {
  for (const auto& a : n.args) compile(a);
  Instr ins{n.op, n.func, 0, n.number, n.vector};
  switch (n.op) {
    case Op::Keypoint:
      ins.arg = n.index;
      max_keypoint_ = std::max(max_keypoint_, n.index);
      break;
    case Op::EndEffector:
      ins.arg = n.index;
      max_arm_ = std::max(max_arm_, n.index);
      break;
    case Op::Mul:
      // 0: scalar*scalar, 1: scalar*vector, 2: vector*scalar
      ins.arg = n.args[0].type == Type::Vector ? 2 : (n.args[1].type == Type::Vector ? 1 : 0);
      break;
    case Op::Call: ins.arg = static_cast<int>(n.args.size()); break;
    default: break;
  }
  program_.push_back(ins);
}

double ConstraintExpr::evaluate(const KeypointArray& keypoints, std::span<const Vec3> ee_points) const {
  if (program_.empty()) throw EvalError("empty constraint expression");
  std::array<Vec3, 32> local;
  std::vector<Vec3> heap;
  Vec3* stack = local.data();
  if (max_depth_ > static_cast<int>(local.size())) {
    heap.resize(static_cast<size_t>(max_depth_));
    stack = heap.data();
  }
  int sp = 0;
  for (const Instr& ins : program_) {
    switch (ins.op) {
      case Op::Number: stack[sp++] = Vec3(ins.number, 0.0, 0.0); break;
      case Op::VectorLiteral: stack[sp++] = ins.vector; break;
      case Op::Keypoint:
        if (ins.arg >= keypoints.rows()) {
          throw EvalError("keypoint index " + std::to_string(ins.arg) + " out of range");
        }
        stack[sp++] = keypoints.row(ins.arg).transpose();
        break;
      case Op::EndEffector:
        if (ins.arg >= static_cast<int>(ee_points.size())) {
          throw EvalError("end-effector index " + std::to_string(ins.arg) + " out of range");
        }
        stack[sp++] = ee_points[static_cast<size_t>(ins.arg)];
        break;
      case Op::Neg: stack[sp - 1] = -stack[sp - 1]; break;
      case Op::Add:
        stack[sp - 2] += stack[sp - 1];
        --sp;
        break;
      case Op::Sub:
        stack[sp - 2] -= stack[sp - 1];
        --sp;
        break;
      case Op::Mul: {
        const Vec3& b = stack[sp - 1];
        Vec3& a = stack[sp - 2];
        if (ins.arg == 0) {
          a.x() *= b.x();
        } else if (ins.arg == 1) {
          a = a.x() * b;
        } else {
          a *= b.x();
        }
        --sp;
        break;
      }
      case Op::Div: {
        const double d = stack[sp - 1].x();
        if (d == 0.0) throw EvalError("division by zero");
        stack[sp - 2] /= d;
        --sp;
        break;
      }
      case Op::MakeVec: {
        const Vec3 v(stack[sp - 3].x(), stack[sp - 2].x(), stack[sp - 1].x());
        sp -= 2;
        stack[sp - 1] = v;
        break;
      }
      case Op::Call: {
        Vec3* a = stack + (sp - ins.arg);
        Vec3 r = Vec3::Zero();
        switch (ins.func) {
          case Func::Norm: r.x() = a[0].norm(); break;
          case Func::Dot: r.x() = a[0].dot(a[1]); break;
          case Func::Cross: r = a[0].cross(a[1]); break;
          case Func::Angle: {
            const double s = a[0].cross(a[1]).norm();
            const double c = a[0].dot(a[1]);
            if (s == 0.0 && c == 0.0) throw EvalError("angle is undefined for a zero-length vector");
            r.x() = std::atan2(s, c);
            break;
          }
          case Func::Abs: r.x() = std::abs(a[0].x()); break;
          case Func::Min:
          case Func::Max: {
            double v = a[0].x();
            for (int i = 1; i < ins.arg; ++i) {
              v = ins.func == Func::Min ? std::min(v, a[i].x()) : std::max(v, a[i].x());
            }
            r.x() = v;
            break;
          }
          case Func::X: r.x() = a[0].x(); break;
          case Func::Y: r.x() = a[0].y(); break;
          case Func::Z: r.x() = a[0].z(); break;
        }
        sp -= ins.arg;
        stack[sp++] = r;
        break;
      }
    }
  }
  return stack[0].x();
}

}  // namespace rekep::dsl
