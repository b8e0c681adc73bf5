#pragma once

// Structural rewriting on expression trees: literal-folding constructors,
// capture-free substitution, and exact affine decomposition. Everything
// here is syntactic; no floating-point "almost zero" tests are made.

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "expr.hpp"

namespace igame {

inline bool is_literal(const Expr& e) {
  return e.kind() == Expr::Kind::number;
}

inline bool is_literal_zero(const Expr& e) {
  return is_literal(e) && e.value() == 0.0;
}

inline bool is_literal_one(const Expr& e) {
  return is_literal(e) && e.value() == 1.0;
}

// Folding constructors. They perform only folds that are exact in IEEE
// arithmetic for finite operands and preserve the expression's domain
// errors where possible; note x*0 -> 0 does drop a potential unbound
// variable, which is acceptable for the symbolic uses below.

inline Expr mk_neg(Expr e) {
  if (is_literal(e)) return Expr::number(-e.value());
  if (e.kind() == Expr::Kind::negate) return e.args()[0];
  return Expr::negate(std::move(e));
}

inline Expr mk_add(Expr a, Expr b) {
  if (is_literal(a) && is_literal(b)) return Expr::number(a.value() + b.value());
  if (is_literal_zero(a)) return b;
  if (is_literal_zero(b)) return a;
  return Expr::binary(Expr::BinOp::add, std::move(a), std::move(b));
}

inline Expr mk_sub(Expr a, Expr b) {
  if (is_literal(a) && is_literal(b)) return Expr::number(a.value() - b.value());
  if (is_literal_zero(b)) return a;
  if (is_literal_zero(a)) return mk_neg(std::move(b));
  return Expr::binary(Expr::BinOp::sub, std::move(a), std::move(b));
}

inline Expr mk_mul(Expr a, Expr b) {
  if (is_literal(a) && is_literal(b)) return Expr::number(a.value() * b.value());
  if (is_literal_zero(a) || is_literal_zero(b)) return Expr::number(0.0);
  if (is_literal_one(a)) return b;
  if (is_literal_one(b)) return a;
  return Expr::binary(Expr::BinOp::mul, std::move(a), std::move(b));
}

inline Expr mk_div(Expr a, Expr b) {
  if (is_literal(a) && is_literal(b) && b.value() != 0.0)
    return Expr::number(a.value() / b.value());
  if (is_literal_zero(a) && !is_literal_zero(b)) return Expr::number(0.0);
  if (is_literal_one(b)) return a;
  return Expr::binary(Expr::BinOp::div, std::move(a), std::move(b));
}

// Replaces every variable whose canonical name appears in `map` with the
// mapped expression. Folding constructors are used on the way back up so
// literal substitutions simplify (e.g. eps[1][0] -> 0 collapses products).
inline Expr substitute(const Expr& e, const std::map<std::string, Expr>& map) {
  switch (e.kind()) {
    case Expr::Kind::number:
      return e;
    case Expr::Kind::variable: {
      auto it = map.find(e.var_name());
      return it == map.end() ? e : it->second;
    }
    case Expr::Kind::negate:
      return mk_neg(substitute(e.args()[0], map));
    case Expr::Kind::binary: {
      Expr a = substitute(e.args()[0], map);
      Expr b = substitute(e.args()[1], map);
      switch (e.op()) {
        case Expr::BinOp::add: return mk_add(std::move(a), std::move(b));
        case Expr::BinOp::sub: return mk_sub(std::move(a), std::move(b));
        case Expr::BinOp::mul: return mk_mul(std::move(a), std::move(b));
        case Expr::BinOp::div: return mk_div(std::move(a), std::move(b));
        case Expr::BinOp::pow:
          if (is_literal(a) && is_literal(b)) {
            const double base = a.value();
            const double ex = b.value();
            const bool ok = !(base == 0.0 && ex < 0.0) &&
                            !(base < 0.0 && ex != std::trunc(ex));
            if (ok) {
              const double v = std::pow(base, ex);
              if (std::isfinite(v)) return Expr::number(v);
            }
          }
          return Expr::binary(Expr::BinOp::pow, std::move(a), std::move(b));
      }
      break;
    }
    case Expr::Kind::call: {
      std::vector<Expr> args;
      args.reserve(e.args().size());
      for (const Expr& a : e.args()) args.push_back(substitute(a, map));
      return Expr::call(e.func(), std::move(args));
    }
  }
  return e;
}

// Result of decomposing e as p + q * var where neither p nor q mentions
// var. The decomposition is exact and purely structural.
struct AffineParts {
  Expr constant;     // p
  Expr coefficient;  // q
};

namespace detail {

inline bool mentions(const Expr& e, std::string_view var) {
  switch (e.kind()) {
    case Expr::Kind::number:
      return false;
    case Expr::Kind::variable:
      return e.var_name() == var;
    default:
      for (const Expr& a : e.args())
        if (mentions(a, var)) return true;
      return false;
  }
}

}  // namespace detail

// Decomposes e == p + q*var syntactically. Returns nullopt when e is not
// affine in var (var under a function call, a power, a divisor, or a
// product of two var-dependent factors).
inline std::optional<AffineParts> affine_in(const Expr& e,
                                            std::string_view var) {
  if (!detail::mentions(e, var))
    return AffineParts{e, Expr::number(0.0)};

  switch (e.kind()) {
    case Expr::Kind::variable:
      // mentions() held, so this is var itself
      return AffineParts{Expr::number(0.0), Expr::number(1.0)};
    case Expr::Kind::negate: {
      auto inner = affine_in(e.args()[0], var);
      if (!inner) return std::nullopt;
      return AffineParts{mk_neg(inner->constant), mk_neg(inner->coefficient)};
    }
    case Expr::Kind::binary: {
      const Expr& a = e.args()[0];
      const Expr& b = e.args()[1];
      switch (e.op()) {
        case Expr::BinOp::add: {
          auto pa = affine_in(a, var);
          auto pb = affine_in(b, var);
          if (!pa || !pb) return std::nullopt;
          return AffineParts{mk_add(pa->constant, pb->constant),
                             mk_add(pa->coefficient, pb->coefficient)};
        }
        case Expr::BinOp::sub: {
          auto pa = affine_in(a, var);
          auto pb = affine_in(b, var);
          if (!pa || !pb) return std::nullopt;
          return AffineParts{mk_sub(pa->constant, pb->constant),
                             mk_sub(pa->coefficient, pb->coefficient)};
        }
        case Expr::BinOp::mul: {
          const bool in_a = detail::mentions(a, var);
          const bool in_b = detail::mentions(b, var);
          if (in_a && in_b) return std::nullopt;
          const Expr& dep = in_a ? a : b;
          const Expr& free = in_a ? b : a;
          auto pd = affine_in(dep, var);
          if (!pd) return std::nullopt;
          return AffineParts{mk_mul(pd->constant, free),
                             mk_mul(pd->coefficient, free)};
        }
        case Expr::BinOp::div: {
          if (detail::mentions(b, var)) return std::nullopt;
          auto pa = affine_in(a, var);
          if (!pa) return std::nullopt;
          return AffineParts{mk_div(pa->constant, b),
                             mk_div(pa->coefficient, b)};
        }
        case Expr::BinOp::pow:
          return std::nullopt;
      }
      break;
    }
    default:
      return std::nullopt;  // var under a function call
  }
  return std::nullopt;
}

}  // namespace igame
