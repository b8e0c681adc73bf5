#pragma once

// Arithmetic expression language used throughout the library: dynamics,
// feedback laws, scenarios and scanned quantities are all written in it.
//
// Grammar, lowest to highest precedence:
//
//   sum     := product (('+' | '-') product)*
//   product := unary (('*' | '/') unary)*
//   unary   := '-' unary | power
//   power   := atom ('^' unary)?          right associative, binds above '-'
//   atom    := NUMBER | 'pi' | 'e' | variable | fn '(' sum (',' sum)? ')'
//            | '(' sum ')'
//
// Variables: t, h, phi[j], dphi[j], u[i][j], uo[i][j], eps[i][j], v[i][j]
// with player/coalition index i >= 1 and component index j >= 0.
// Functions: sin cos exp log tanh sqrt abs (unary), min max (binary).
// Numbers are non-negative decimal literals with optional exponent; 'pi'
// and 'e' desugar to literals at parse time.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace igame {

enum class VarBase { time, step, phi, dphi, u, uo, eps, v };

// A structurally decoded variable reference. i is the player/coalition
// index (-1 for unindexed bases), j the component index.
struct VarRef {
  VarBase base = VarBase::time;
  int i = -1;
  int j = -1;

  bool operator==(const VarRef&) const = default;

  static constexpr const char* base_name(VarBase b) {
    switch (b) {
      case VarBase::time: return "t";
      case VarBase::step: return "h";
      case VarBase::phi:  return "phi";
      case VarBase::dphi: return "dphi";
      case VarBase::u:    return "u";
      case VarBase::uo:   return "uo";
      case VarBase::eps:  return "eps";
      case VarBase::v:    return "v";
    }
    return "?";
  }

  std::string canonical() const {
    std::string s = base_name(base);
    if (base == VarBase::phi || base == VarBase::dphi) {
      s += '[' + std::to_string(j) + ']';
    } else if (base == VarBase::u || base == VarBase::uo ||
               base == VarBase::eps || base == VarBase::v) {
      s += '[' + std::to_string(i) + ']';
      s += '[' + std::to_string(j) + ']';
    }
    return s;
  }
};

// Thrown on any lexical or grammatical failure. `offset` is the byte
// offset into the source where the failure was detected; `expected`
// lists the token classes that would have been accepted there.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::string message, std::size_t offset,
             std::vector<std::string> expected = {})
      : std::runtime_error(std::move(message)),
        offset_(offset),
        expected_(std::move(expected)) {}

  std::size_t offset() const { return offset_; }
  const std::vector<std::string>& expected() const { return expected_; }

 private:
  std::size_t offset_;
  std::vector<std::string> expected_;
};

// Thrown by evaluation: unbound variables and numeric domain errors.
// `node` carries the offending subexpression in canonical text form.
class EvalError : public std::runtime_error {
 public:
  EvalError(std::string message, std::string node)
      : std::runtime_error(std::move(message)), node_(std::move(node)) {}

  const std::string& node() const { return node_; }

 private:
  std::string node_;
};

// Immutable expression tree with cheap value-semantics copies.
class Expr {
 public:
  enum class Kind { number, variable, negate, binary, call };
  enum class BinOp { add, sub, mul, div, pow };
  enum class Func { sin, cos, exp, log, tanh, sqrt, abs, min, max };

  static Expr number(double v) {
    if (!std::isfinite(v))
      throw std::invalid_argument("expression literal must be finite");
    Node n;
    n.kind = Kind::number;
    n.num = v;
    return Expr(std::move(n));
  }

  static Expr variable(VarRef ref) {
    Node n;
    n.kind = Kind::variable;
    n.ref = ref;
    n.name = ref.canonical();
    return Expr(std::move(n));
  }

  static Expr negate(Expr e) {
    // Negated literals fold so that printing and reparsing reproduces the
    // tree: "(-3)" must come back as the literal -3, not negate(3).
    if (e.kind() == Kind::number) return number(-e.value());
    Node n;
    n.kind = Kind::negate;
    n.args.push_back(std::move(e));
    return Expr(std::move(n));
  }

  static Expr binary(BinOp op, Expr lhs, Expr rhs) {
    Node n;
    n.kind = Kind::binary;
    n.op = op;
    n.args.push_back(std::move(lhs));
    n.args.push_back(std::move(rhs));
    return Expr(std::move(n));
  }

  static Expr call(Func f, std::vector<Expr> args) {
    const std::size_t want = (f == Func::min || f == Func::max) ? 2 : 1;
    if (args.size() != want)
      throw std::invalid_argument("wrong arity for function call");
    Node n;
    n.kind = Kind::call;
    n.fn = f;
    n.args = std::move(args);
    return Expr(std::move(n));
  }

  Kind kind() const { return node_->kind; }
  double value() const { return node_->num; }
  const VarRef& var() const { return node_->ref; }
  const std::string& var_name() const { return node_->name; }
  BinOp op() const { return node_->op; }
  Func func() const { return node_->fn; }
  const std::vector<Expr>& args() const { return node_->args; }

  // Structural (deep) equality.
  bool operator==(const Expr& other) const {
    if (node_ == other.node_) return true;
    const Node& a = *node_;
    const Node& b = *other.node_;
    if (a.kind != b.kind) return false;
    switch (a.kind) {
      case Kind::number:
        // bitwise-equal semantics; also makes 0.0 != -0.0 irrelevant here
        return a.num == b.num;
      case Kind::variable: return a.ref == b.ref;
      case Kind::negate: break;
      case Kind::binary:
        if (a.op != b.op) return false;
        break;
      case Kind::call:
        if (a.fn != b.fn) return false;
        break;
    }
    if (a.args.size() != b.args.size()) return false;
    for (std::size_t k = 0; k < a.args.size(); ++k)
      if (!(a.args[k] == b.args[k])) return false;
    return true;
  }

 private:
  struct Node {
    Kind kind = Kind::number;
    double num = 0.0;
    VarRef ref;
    std::string name;        // canonical variable name
    BinOp op = BinOp::add;
    Func fn = Func::sin;
    std::vector<Expr> args;
  };

  explicit Expr(Node n) : node_(std::make_shared<const Node>(std::move(n))) {}

  std::shared_ptr<const Node> node_;
};

// Variable bindings for evaluation, keyed by canonical variable name.
class Env {
 public:
  void set(std::string_view name, double value) {
    auto it = values_.find(name);
    if (it != values_.end())
      it->second = value;
    else
      values_.emplace(std::string(name), value);
  }

  std::optional<double> lookup(std::string_view name) const {
    auto it = values_.find(name);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  bool contains(std::string_view name) const {
    return values_.find(name) != values_.end();
  }

  std::size_t size() const { return values_.size(); }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const {
      return std::hash<std::string_view>{}(s);
    }
  };
  std::unordered_map<std::string, double, Hash, std::equal_to<>> values_;
};

// ---------------------------------------------------------------------------
// Canonical serialization: fully parenthesized, round-trips through parse().

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

}  // namespace detail

inline std::string to_string(const Expr& e) {
  switch (e.kind()) {
    case Expr::Kind::number: {
      const double v = e.value();
      // Negative literals cannot be written directly in the grammar; emit
      // them as a negation so the text stays parseable.
      if (std::signbit(v) && v != 0.0)
        return "(-" + detail::format_double(-v) + ")";
      return detail::format_double(v == 0.0 ? 0.0 : v);
    }
    case Expr::Kind::variable:
      return e.var_name();
    case Expr::Kind::negate:
      return "(-" + to_string(e.args()[0]) + ")";
    case Expr::Kind::binary: {
      const char* op = "?";
      switch (e.op()) {
        case Expr::BinOp::add: op = " + "; break;
        case Expr::BinOp::sub: op = " - "; break;
        case Expr::BinOp::mul: op = " * "; break;
        case Expr::BinOp::div: op = " / "; break;
        case Expr::BinOp::pow: op = " ^ "; break;
      }
      return "(" + to_string(e.args()[0]) + op + to_string(e.args()[1]) + ")";
    }
    case Expr::Kind::call: {
      const char* name = "?";
      switch (e.func()) {
        case Expr::Func::sin:  name = "sin";  break;
        case Expr::Func::cos:  name = "cos";  break;
        case Expr::Func::exp:  name = "exp";  break;
        case Expr::Func::log:  name = "log";  break;
        case Expr::Func::tanh: name = "tanh"; break;
        case Expr::Func::sqrt: name = "sqrt"; break;
        case Expr::Func::abs:  name = "abs";  break;
        case Expr::Func::min:  name = "min";  break;
        case Expr::Func::max:  name = "max";  break;
      }
      std::string s = std::string(name) + "(" + to_string(e.args()[0]);
      if (e.args().size() == 2) s += ", " + to_string(e.args()[1]);
      return s + ")";
    }
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Parser

namespace detail {

enum class TokKind {
  number, ident, lparen, rparen, lbracket, rbracket, comma,
  plus, minus, star, slash, caret, end
};

struct Token {
  TokKind kind = TokKind::end;
  std::size_t offset = 0;
  std::string_view text;
  double value = 0.0;
};

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) { advance(); }

  Expr parse_toplevel() {
    if (src_.empty())
      throw ParseError("syntax error at offset 0: empty expression", 0,
                       {"expression"});
    Expr e = parse_sum();
    if (tok_.kind != TokKind::end)
      fail({"operator", "end of input"});
    return e;
  }

 private:
  [[noreturn]] void fail(std::vector<std::string> expected) const {
    std::string msg = "syntax error at offset " + std::to_string(tok_.offset) +
                      ": expected ";
    for (std::size_t k = 0; k < expected.size(); ++k) {
      if (k) msg += " or ";
      msg += expected[k];
    }
    msg += ", found ";
    msg += tok_.kind == TokKind::end
               ? "end of input"
               : "'" + std::string(tok_.text) + "'";
    throw ParseError(std::move(msg), tok_.offset, std::move(expected));
  }

  Expr parse_sum() {
    Expr e = parse_product();
    while (tok_.kind == TokKind::plus || tok_.kind == TokKind::minus) {
      const auto op = tok_.kind == TokKind::plus ? Expr::BinOp::add
                                                 : Expr::BinOp::sub;
      advance();
      e = Expr::binary(op, std::move(e), parse_product());
    }
    return e;
  }

  Expr parse_product() {
    Expr e = parse_unary();
    while (tok_.kind == TokKind::star || tok_.kind == TokKind::slash) {
      const auto op = tok_.kind == TokKind::star ? Expr::BinOp::mul
                                                 : Expr::BinOp::div;
      advance();
      e = Expr::binary(op, std::move(e), parse_unary());
    }
    return e;
  }

  Expr parse_unary() {
    if (tok_.kind == TokKind::minus) {
      advance();
      return Expr::negate(parse_unary());
    }
    return parse_power();
  }

  Expr parse_power() {
    Expr base = parse_atom();
    if (tok_.kind == TokKind::caret) {
      advance();
      // Right associative; the exponent may itself carry a unary minus.
      return Expr::binary(Expr::BinOp::pow, std::move(base), parse_unary());
    }
    return base;
  }

  Expr parse_atom() {
    switch (tok_.kind) {
      case TokKind::number: {
        Expr e = Expr::number(tok_.value);
        advance();
        return e;
      }
      case TokKind::lparen: {
        advance();
        Expr e = parse_sum();
        expect(TokKind::rparen, "')'");
        return e;
      }
      case TokKind::ident:
        return parse_ident();
      default:
        fail({"number", "variable", "function", "'('", "'-'"});
    }
  }

  Expr parse_ident() {
    const std::string_view name = tok_.text;
    const std::size_t name_offset = tok_.offset;
    advance();

    if (name == "t") return Expr::variable({VarBase::time, -1, -1});
    if (name == "h") return Expr::variable({VarBase::step, -1, -1});
    if (name == "pi") return Expr::number(3.14159265358979323846);
    if (name == "e") return Expr::number(2.71828182845904523536);

    if (name == "phi" || name == "dphi") {
      const VarBase base = name == "phi" ? VarBase::phi : VarBase::dphi;
      const int j = parse_index(0);
      return Expr::variable({base, -1, j});
    }
    if (name == "u" || name == "uo" || name == "eps" || name == "v") {
      VarBase base = VarBase::u;
      if (name == "uo") base = VarBase::uo;
      else if (name == "eps") base = VarBase::eps;
      else if (name == "v") base = VarBase::v;
      const int i = parse_index(1);
      const int j = parse_index(0);
      return Expr::variable({base, i, j});
    }

    static const std::pair<std::string_view, Expr::Func> func_table[] = {
        {"sin", Expr::Func::sin},   {"cos", Expr::Func::cos},
        {"exp", Expr::Func::exp},   {"log", Expr::Func::log},
        {"tanh", Expr::Func::tanh}, {"sqrt", Expr::Func::sqrt},
        {"abs", Expr::Func::abs},   {"min", Expr::Func::min},
        {"max", Expr::Func::max}};
    for (const auto& [fname, fn] : func_table) {
      if (name == fname) {
        expect(TokKind::lparen, "'('");
        std::vector<Expr> args;
        args.push_back(parse_sum());
        if (fn == Expr::Func::min || fn == Expr::Func::max) {
          expect(TokKind::comma, "','");
          args.push_back(parse_sum());
        }
        expect(TokKind::rparen, "')'");
        return Expr::call(fn, std::move(args));
      }
    }

    if (tok_.kind == TokKind::lparen)
      throw ParseError("unknown function '" + std::string(name) +
                           "' at offset " + std::to_string(name_offset),
                       name_offset, {"function"});
    throw ParseError("unknown variable '" + std::string(name) +
                         "' at offset " + std::to_string(name_offset),
                     name_offset, {"variable"});
  }

  // Parses "[<integer>]" and returns the index. min_value is 1 for
  // player/coalition positions, 0 for component positions.
  int parse_index(int min_value) {
    expect_no_consume(TokKind::lbracket, "'['");
    advance();
    if (tok_.kind != TokKind::number) fail({"integer index"});
    // Indices must be plain digit runs: no sign, no dot, no exponent.
    for (char c : tok_.text) {
      if (c < '0' || c > '9')
        throw ParseError("malformed index at offset " +
                             std::to_string(tok_.offset) +
                             ": indices must be decimal integers",
                         tok_.offset, {"integer index"});
    }
    if (tok_.text.size() > 6)
      throw ParseError("malformed index at offset " +
                           std::to_string(tok_.offset) + ": index too large",
                       tok_.offset, {"integer index"});
    int value = 0;
    for (char c : tok_.text) value = value * 10 + (c - '0');
    if (value < min_value)
      throw ParseError("malformed index at offset " +
                           std::to_string(tok_.offset) +
                           ": index must be >= " + std::to_string(min_value),
                       tok_.offset, {"integer index"});
    advance();
    expect(TokKind::rbracket, "']'");
    return value;
  }

  void expect(TokKind kind, const char* what) {
    if (tok_.kind != kind) fail({what});
    advance();
  }

  void expect_no_consume(TokKind kind, const char* what) {
    if (tok_.kind != kind) fail({what});
  }

  void advance() { tok_ = lex(); }

  Token lex() {
    while (pos_ < src_.size() &&
           (src_[pos_] == ' ' || src_[pos_] == '\t' || src_[pos_] == '\n' ||
            src_[pos_] == '\r'))
      ++pos_;
    Token t;
    t.offset = pos_;
    if (pos_ >= src_.size()) {
      t.kind = TokKind::end;
      return t;
    }
    const char c = src_[pos_];
    auto single = [&](TokKind k) {
      t.kind = k;
      t.text = src_.substr(pos_, 1);
      ++pos_;
      return t;
    };
    switch (c) {
      case '(': return single(TokKind::lparen);
      case ')': return single(TokKind::rparen);
      case '[': return single(TokKind::lbracket);
      case ']': return single(TokKind::rbracket);
      case ',': return single(TokKind::comma);
      case '+': return single(TokKind::plus);
      case '-': return single(TokKind::minus);
      case '*': return single(TokKind::star);
      case '/': return single(TokKind::slash);
      case '^': return single(TokKind::caret);
      default: break;
    }
    if ((c >= '0' && c <= '9') || c == '.') return lex_number();
    if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_') {
      std::size_t end = pos_;
      while (end < src_.size() &&
             ((src_[end] >= 'a' && src_[end] <= 'z') ||
              (src_[end] >= 'A' && src_[end] <= 'Z') ||
              (src_[end] >= '0' && src_[end] <= '9') || src_[end] == '_'))
        ++end;
      t.kind = TokKind::ident;
      t.text = src_.substr(pos_, end - pos_);
      pos_ = end;
      return t;
    }
    throw ParseError("syntax error at offset " + std::to_string(pos_) +
                         ": unexpected character '" + std::string(1, c) + "'",
                     pos_, {"token"});
  }

  Token lex_number() {
    const std::size_t start = pos_;
    std::size_t end = pos_;
    auto digits = [&] {
      std::size_t n = 0;
      while (end < src_.size() && src_[end] >= '0' && src_[end] <= '9') {
        ++end;
        ++n;
      }
      return n;
    };
    const std::size_t int_digits = digits();
    bool has_fraction = false;
    if (end < src_.size() && src_[end] == '.') {
      ++end;
      has_fraction = true;
      digits();
    }
    if (int_digits == 0 && !has_fraction)
      throw ParseError("syntax error at offset " + std::to_string(start) +
                           ": malformed number",
                       start, {"number"});
    if (int_digits == 0 && has_fraction && end == start + 1)
      throw ParseError("syntax error at offset " + std::to_string(start) +
                           ": malformed number",
                       start, {"number"});
    if (end < src_.size() && (src_[end] == 'e' || src_[end] == 'E')) {
      std::size_t exp_pos = end + 1;
      if (exp_pos < src_.size() &&
          (src_[exp_pos] == '+' || src_[exp_pos] == '-'))
        ++exp_pos;
      std::size_t exp_digits = 0;
      while (exp_pos < src_.size() && src_[exp_pos] >= '0' &&
             src_[exp_pos] <= '9') {
        ++exp_pos;
        ++exp_digits;
      }
      // Only consume the exponent when it is well formed; otherwise the
      // 'e' is left for the identifier lexer (e.g. "2e" never occurs but
      // "2*e" does after the '*').
      if (exp_digits > 0) end = exp_pos;
    }
    const std::string_view text = src_.substr(start, end - start);
    double value = 0.0;
    auto [ptr, ec] =
        std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec == std::errc::result_out_of_range || !std::isfinite(value))
      throw ParseError("number out of range at offset " +
                           std::to_string(start),
                       start, {"number"});
    if (ec != std::errc() || ptr != text.data() + text.size())
      throw ParseError("syntax error at offset " + std::to_string(start) +
                           ": malformed number",
                       start, {"number"});
    Token t;
    t.kind = TokKind::number;
    t.offset = start;
    t.text = text;
    t.value = value;
    pos_ = end;
    return t;
  }

  std::string_view src_;
  std::size_t pos_ = 0;
  Token tok_;
};

}  // namespace detail

inline Expr parse(std::string_view source) {
  return detail::Parser(source).parse_toplevel();
}

// ---------------------------------------------------------------------------
// Evaluation

namespace detail {

inline bool is_integer_valued(double x) {
  return std::isfinite(x) && x == std::trunc(x);
}

}  // namespace detail

inline double evaluate(const Expr& e, const Env& env) {
  switch (e.kind()) {
    case Expr::Kind::number:
      return e.value();
    case Expr::Kind::variable: {
      const auto v = env.lookup(e.var_name());
      if (!v)
        throw EvalError("unbound variable '" + e.var_name() + "'",
                        e.var_name());
      return *v;
    }
    case Expr::Kind::negate:
      return -evaluate(e.args()[0], env);
    case Expr::Kind::binary: {
      const double a = evaluate(e.args()[0], env);
      const double b = evaluate(e.args()[1], env);
      switch (e.op()) {
        case Expr::BinOp::add: return a + b;
        case Expr::BinOp::sub: return a - b;
        case Expr::BinOp::mul: return a * b;
        case Expr::BinOp::div:
          if (b == 0.0)
            throw EvalError("division by zero in '" + to_string(e) + "'",
                            to_string(e));
          return a / b;
        case Expr::BinOp::pow:
          if (a == 0.0 && b < 0.0)
            throw EvalError("zero raised to a negative power in '" +
                                to_string(e) + "'",
                            to_string(e));
          if (a < 0.0 && !detail::is_integer_valued(b))
            throw EvalError(
                "negative base with non-integer exponent in '" +
                    to_string(e) + "'",
                to_string(e));
          return std::pow(a, b);
      }
      break;
    }
    case Expr::Kind::call: {
      const double a = evaluate(e.args()[0], env);
      switch (e.func()) {
        case Expr::Func::sin:  return std::sin(a);
        case Expr::Func::cos:  return std::cos(a);
        case Expr::Func::exp:  return std::exp(a);
        case Expr::Func::log:
          if (a <= 0.0)
            throw EvalError("log of non-positive value in '" + to_string(e) +
                                "'",
                            to_string(e));
          return std::log(a);
        case Expr::Func::tanh: return std::tanh(a);
        case Expr::Func::sqrt:
          if (a < 0.0)
            throw EvalError("sqrt of negative value in '" + to_string(e) +
                                "'",
                            to_string(e));
          return std::sqrt(a);
        case Expr::Func::abs:  return std::abs(a);
        case Expr::Func::min:  return std::min(a, evaluate(e.args()[1], env));
        case Expr::Func::max:  return std::max(a, evaluate(e.args()[1], env));
      }
      break;
    }
  }
  throw EvalError("malformed expression node", "?");
}

inline void collect_free_variables(const Expr& e, std::set<std::string>& out) {
  switch (e.kind()) {
    case Expr::Kind::number:
      return;
    case Expr::Kind::variable:
      out.insert(e.var_name());
      return;
    default:
      for (const Expr& a : e.args()) collect_free_variables(a, out);
  }
}

inline std::set<std::string> free_variables(const Expr& e) {
  std::set<std::string> out;
  collect_free_variables(e, out);
  return out;
}

// Central finite difference of e with respect to `var` at the point
// described by env: (e(var + delta) - e(var - delta)) / (2 delta).
inline double partial_fd(const Expr& e, const Env& env, std::string_view var,
                         double delta) {
  if (!(delta > 0.0))
    throw std::invalid_argument("partial_fd: delta must be positive");
  const auto x = env.lookup(var);
  if (!x)
    throw EvalError("unbound variable '" + std::string(var) + "'",
                    std::string(var));
  Env shifted = env;
  shifted.set(var, *x + delta);
  const double above = evaluate(e, shifted);
  shifted.set(var, *x - delta);
  const double below = evaluate(e, shifted);
  return (above - below) / (2.0 * delta);
}

}  // namespace igame
