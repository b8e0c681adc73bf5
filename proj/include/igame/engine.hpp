#pragma once

// Discrete-time execution of a game: per-step control resolution (direct
// evaluation or a damped Newton solve for inverse/implicit laws) and the
// explicit Euler integrator. The discretization convention: feedbacks see
// the left difference of phi, the evolution advances by the right one.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "expr.hpp"
#include "model.hpp"
#include "rewrite.hpp"

namespace igame {

class EngineError : public std::runtime_error {
 public:
  EngineError(std::string code, std::string message)
      : std::runtime_error(std::move(message)), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

struct StateVector {
  std::vector<double> values;
  double t = 0.0;
};

// Per-player (or per-coalition) control values: outer index is id-1.
using Values = std::vector<std::vector<double>>;

struct ControlResolution {
  Values u;    // realized controls; coalition controls for coalition games
  Values uo;   // pure controls per player
  Values eps;  // eps per player (empty vectors where eps_dim = 0)
  int iterations = 0;
};

struct TrajectorySample {
  double t = 0.0;
  std::vector<double> phi;
  Values u;
  Values uo;
  Values eps;
};

struct Trajectory {
  std::string game_name;
  double step = 0.0;
  bool coalitional = false;
  bool eps_recorded = false;
  // Convention flag: dphi at the first grid point is the zero vector.
  bool initial_dphi_zero = true;
  std::vector<TrajectorySample> samples;
};

namespace detail {

constexpr double kNewtonTol = 1e-9;
constexpr double kNewtonDelta = 1e-7;
constexpr int kNewtonMaxIterations = 100;
constexpr int kNewtonMaxHalvings = 20;
constexpr double kConditionLimit = 1e12;

inline bool mentions_base(const Expr& e, VarBase base) {
  switch (e.kind()) {
    case Expr::Kind::number:
      return false;
    case Expr::Kind::variable:
      return e.var().base == base;
    default:
      for (const Expr& a : e.args())
        if (mentions_base(a, base)) return true;
      return false;
  }
}

inline void bind_state(Env& env, const GameDefinition& g, const StateVector& s,
                       const std::vector<double>& dphi_prev) {
  env.set("t", s.t);
  env.set("h", g.horizon.step);
  for (int j = 0; j < g.state_dim; ++j) {
    env.set(VarRef{VarBase::phi, -1, j}.canonical(), s.values[j]);
    env.set(VarRef{VarBase::dphi, -1, j}.canonical(), dphi_prev[j]);
  }
}

inline void bind_values(Env& env, VarBase base, const Values& vals) {
  for (std::size_t i = 0; i < vals.size(); ++i)
    for (std::size_t c = 0; c < vals[i].size(); ++c)
      env.set(VarRef{base, static_cast<int>(i) + 1, static_cast<int>(c)}
                  .canonical(),
              vals[i][c]);
}

inline void check_shapes(const GameDefinition& g, const StateVector& s,
                         const Values& uo, const Values& eps,
                         const std::vector<double>& dphi_prev) {
  const std::size_t n = g.players.size();
  if (s.values.size() != static_cast<std::size_t>(g.state_dim) ||
      dphi_prev.size() != static_cast<std::size_t>(g.state_dim) ||
      uo.size() != n || eps.size() != n)
    throw EngineError("SHAPE_MISMATCH",
                      "state/control argument shapes do not match the game");
  for (std::size_t i = 0; i < n; ++i)
    if (uo[i].size() != static_cast<std::size_t>(g.players[i].control_dim) ||
        eps[i].size() != static_cast<std::size_t>(g.players[i].eps_dim))
      throw EngineError("SHAPE_MISMATCH",
                        "per-player control shapes do not match the game");
}

}  // namespace detail

// Solves the per-step control relations at state s. dphi_prev must be the
// left difference (phi_k - phi_{k-1})/h, or zeros at the first grid point.
// warm_start, when given, seeds the Newton iteration with the previous
// step's realized controls.
inline ControlResolution resolve_controls(const GameDefinition& g,
                                          const StateVector& s,
                                          const Values& uo, const Values& eps,
                                          const std::vector<double>& dphi_prev,
                                          const Values* warm_start = nullptr) {
  detail::check_shapes(g, s, uo, eps, dphi_prev);

  ControlResolution res;
  res.uo = uo;
  res.eps = eps;

  Env env;
  detail::bind_state(env, g, s, dphi_prev);
  detail::bind_values(env, VarBase::uo, uo);
  detail::bind_values(env, VarBase::eps, eps);

  if (g.coalitional()) {
    res.u.reserve(g.coalitions.size());
    for (const CoalitionSpec& coal : g.coalitions) {
      std::vector<double> v(coal.exprs.size());
      for (std::size_t c = 0; c < coal.exprs.size(); ++c)
        v[c] = evaluate(coal.exprs[c], env);
      res.u.push_back(std::move(v));
    }
    return res;
  }

  const int n = static_cast<int>(g.players.size());
  res.u.assign(static_cast<std::size_t>(n), {});

  // Players whose direct law mentions no realized control anywhere are
  // explicit: evaluate them up front and bind the values. Everything else
  // goes into one stacked Newton solve.
  std::vector<int> coupled;
  for (int i = 0; i < n; ++i) {
    const PlayerSpec& p = g.players[i];
    bool explicit_law = p.feedback.form == FeedbackForm::direct;
    if (explicit_law)
      for (const Expr& e : p.feedback.exprs)
        if (detail::mentions_base(e, VarBase::u)) {
          explicit_law = false;
          break;
        }
    if (explicit_law) {
      std::vector<double> u(p.feedback.exprs.size());
      for (std::size_t c = 0; c < p.feedback.exprs.size(); ++c)
        u[c] = evaluate(p.feedback.exprs[c], env);
      res.u[i] = u;
      for (std::size_t c = 0; c < u.size(); ++c)
        env.set(VarRef{VarBase::u, p.id, static_cast<int>(c)}.canonical(),
                u[c]);
    } else {
      coupled.push_back(i);
    }
  }
  if (coupled.empty()) return res;

  // Stack the coupled unknowns and their residual expressions.
  std::vector<std::string> unknowns;
  std::vector<Expr> residuals;
  std::vector<double> guess;
  for (int i : coupled) {
    const PlayerSpec& p = g.players[i];
    for (int c = 0; c < p.control_dim; ++c) {
      unknowns.push_back(VarRef{VarBase::u, p.id, c}.canonical());
      const double w = warm_start && i < static_cast<int>(warm_start->size()) &&
                               c < static_cast<int>((*warm_start)[i].size())
                           ? (*warm_start)[i][c]
                           : uo[i][c];
      guess.push_back(w);
    }
    for (int c = 0; c < p.control_dim; ++c) {
      const Expr& f = p.feedback.exprs[c];
      switch (p.feedback.form) {
        case FeedbackForm::direct:
          // u - f(...) = 0 (f may reference other players' u)
          residuals.push_back(
              mk_sub(Expr::variable({VarBase::u, p.id, c}), f));
          break;
        case FeedbackForm::inverse:
          // f(u, ...) - uo_declared = 0
          residuals.push_back(mk_sub(f, Expr::number(uo[i][c])));
          break;
        case FeedbackForm::implicit:
          residuals.push_back(f);
          break;
      }
    }
  }

  const int dim = static_cast<int>(unknowns.size());
  for (int k = 0; k < dim; ++k) env.set(unknowns[k], guess[k]);

  auto residual_norm = [&]() {
    double norm = 0.0;
    for (const Expr& r : residuals)
      norm = std::max(norm, std::abs(evaluate(r, env)));
    return norm;
  };

  Eigen::VectorXd r(dim);
  Eigen::MatrixXd jac(dim, dim);
  std::vector<double> x = guess;
  double rnorm = residual_norm();
  int iterations = 0;

  while (rnorm > detail::kNewtonTol) {
    if (iterations >= detail::kNewtonMaxIterations)
      throw EngineError("NO_CONVERGENCE",
                        "control solve did not converge at t = " +
                            std::to_string(s.t));
    for (int row = 0; row < dim; ++row) {
      r(row) = evaluate(residuals[row], env);
      for (int col = 0; col < dim; ++col)
        jac(row, col) = partial_fd(residuals[row], env, unknowns[col],
                                   detail::kNewtonDelta);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(
        jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double smax = svd.singularValues()(0);
    const double smin = svd.singularValues()(dim - 1);
    if (!(smin > 0.0) || smax / smin > detail::kConditionLimit)
      throw EngineError("SINGULAR_JACOBIAN",
                        "control relation Jacobian is singular at t = " +
                            std::to_string(s.t));
    Eigen::VectorXd dx = svd.solve(-r);

    // Damped update: halve until the residual norm decreases.
    double alpha = 1.0;
    bool accepted = false;
    for (int halving = 0; halving <= detail::kNewtonMaxHalvings; ++halving) {
      for (int k = 0; k < dim; ++k) env.set(unknowns[k], x[k] + alpha * dx(k));
      const double trial = residual_norm();
      if (trial < rnorm) {
        for (int k = 0; k < dim; ++k) x[k] += alpha * dx(k);
        rnorm = trial;
        accepted = true;
        break;
      }
      alpha *= 0.5;
    }
    if (!accepted)
      throw EngineError("NO_CONVERGENCE",
                        "damped Newton stalled at t = " + std::to_string(s.t));
    ++iterations;
  }

  for (double v : x)
    if (!std::isfinite(v))
      throw EngineError("NO_CONVERGENCE",
                        "control solve produced a non-finite value");

  res.iterations = iterations;
  std::size_t k = 0;
  for (int i : coupled) {
    const PlayerSpec& p = g.players[i];
    res.u[i].assign(x.begin() + k, x.begin() + k + p.control_dim);
    k += static_cast<std::size_t>(p.control_dim);
  }
  return res;
}

// One explicit Euler step: controls resolved at the left endpoint, state
// advanced by the right difference.
inline std::pair<StateVector, ControlResolution> step(
    const GameDefinition& g, const StateVector& s, const Values& uo,
    const Values& eps, const std::vector<double>& dphi_prev,
    const Values* warm_start = nullptr) {
  ControlResolution res = resolve_controls(g, s, uo, eps, dphi_prev, warm_start);

  Env env;
  env.set("t", s.t);
  env.set("h", g.horizon.step);
  for (int j = 0; j < g.state_dim; ++j)
    env.set(VarRef{VarBase::phi, -1, j}.canonical(), s.values[j]);
  detail::bind_values(env, g.coalitional() ? VarBase::v : VarBase::u, res.u);

  StateVector next;
  next.t = s.t + g.horizon.step;
  next.values.resize(s.values.size());
  for (int j = 0; j < g.state_dim; ++j) {
    next.values[j] = s.values[j] + g.horizon.step * evaluate(g.dynamics[j], env);
    if (!std::isfinite(next.values[j]))
      throw EngineError("NON_FINITE_STATE",
                        "phi[" + std::to_string(j) +
                            "] became non-finite at t = " +
                            std::to_string(next.t));
  }
  return {std::move(next), std::move(res)};
}

struct SimulationFailure {
  std::string code;
  std::string message;
  int at_step = 0;
};

// A partial trajectory is retained when a numeric failure interrupts the
// run; `failure` holds the reason.
struct SimulationResult {
  Trajectory trajectory;
  std::optional<SimulationFailure> failure;

  const Trajectory& value() const {
    if (failure)
      throw EngineError(failure->code, failure->message);
    return trajectory;
  }
};

// Runs the scenario (and eps_truth) over the whole horizon, recording every
// grid point including the final one.
inline SimulationResult simulate(const GameDefinition& g) {
  const int n = static_cast<int>(g.players.size());
  bool needs_eps = false;
  for (const PlayerSpec& p : g.players)
    if (p.eps_dim > 0) needs_eps = true;
  if (needs_eps && !g.eps_truth)
    throw EngineError("MISSING_EPS_TRUTH",
                      "simulate requires eps_truth (or all eps_dim = 0)");

  // Shape guards so a malformed definition fails cleanly, not by indexing.
  if (static_cast<int>(g.dynamics.size()) != g.state_dim ||
      static_cast<int>(g.scenario.uo.size()) != n ||
      (g.eps_truth && static_cast<int>(g.eps_truth->size()) != n) ||
      (!g.initial_state.empty() &&
       static_cast<int>(g.initial_state.size()) != g.state_dim))
    throw EngineError("INVALID_GAME", "game shapes are inconsistent");
  for (int i = 0; i < n; ++i) {
    if (static_cast<int>(g.scenario.uo[i].size()) != g.players[i].control_dim)
      throw EngineError("INVALID_GAME", "scenario shape mismatch");
    if (needs_eps && static_cast<int>((*g.eps_truth)[i].size()) !=
                         g.players[i].eps_dim)
      throw EngineError("INVALID_GAME", "eps_truth shape mismatch");
  }
  if (!(g.horizon.step > 0.0) || !(g.horizon.t1 > g.horizon.t0))
    throw EngineError("INVALID_GAME", "horizon is malformed");

  SimulationResult out;
  Trajectory& traj = out.trajectory;
  traj.game_name = g.name;
  traj.step = g.horizon.step;
  traj.coalitional = g.coalitional();
  traj.eps_recorded = true;

  const int steps = g.horizon.steps();
  const double h = g.horizon.step;

  StateVector s{g.initial_phi(), g.horizon.t0};
  std::vector<double> dphi_prev(static_cast<std::size_t>(g.state_dim), 0.0);
  const Values* warm = nullptr;
  Values last_u;

  Env sched;  // scenario and eps_truth evaluation context
  for (int k = 0; k <= steps; ++k) {
    // Keep the grid exact: t_k from k, not by accumulation.
    s.t = g.horizon.t0 + static_cast<double>(k) * h;

    Values uo(static_cast<std::size_t>(n));
    Values eps(static_cast<std::size_t>(n));
    try {
      sched.set("t", s.t);
      sched.set("h", h);
      for (int j = 0; j < g.state_dim; ++j)
        sched.set(VarRef{VarBase::phi, -1, j}.canonical(), s.values[j]);
      for (int i = 0; i < n; ++i) {
        const PlayerSpec& p = g.players[i];
        uo[i].resize(static_cast<std::size_t>(p.control_dim));
        for (int c = 0; c < p.control_dim; ++c)
          uo[i][c] = evaluate(g.scenario.uo[i][c], sched);
        eps[i].resize(static_cast<std::size_t>(p.eps_dim));
        for (int c = 0; c < p.eps_dim; ++c)
          eps[i][c] = evaluate((*g.eps_truth)[i][c], sched);
      }

      ControlResolution res;
      StateVector next;
      if (k < steps) {
        auto [ns, r] = step(g, s, uo, eps, dphi_prev, warm);
        next = std::move(ns);
        res = std::move(r);
      } else {
        res = resolve_controls(g, s, uo, eps, dphi_prev, warm);
      }

      traj.samples.push_back({s.t, s.values, res.u, res.uo, res.eps});

      if (k < steps) {
        for (int j = 0; j < g.state_dim; ++j)
          dphi_prev[j] = (next.values[j] - s.values[j]) / h;
        s.values = std::move(next.values);
        last_u = traj.samples.back().u;
        warm = &last_u;
      }
    } catch (const EngineError& e) {
      out.failure = SimulationFailure{e.code(), e.what(), k};
      return out;
    } catch (const EvalError& e) {
      out.failure = SimulationFailure{"EVAL_ERROR", e.what(), k};
      return out;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Derivative exclusion: rewrite k=1 laws to k=0 by substituting dphi[j]
// with the evolution expression, then re-solving to direct form when the
// relation is affine in the player's own control.

namespace detail {

inline bool mentions_own_u(const Expr& e, int player_id) {
  switch (e.kind()) {
    case Expr::Kind::number:
      return false;
    case Expr::Kind::variable:
      return e.var().base == VarBase::u && e.var().i == player_id;
    default:
      for (const Expr& a : e.args())
        if (mentions_own_u(a, player_id)) return true;
      return false;
  }
}

}  // namespace detail

inline GameDefinition exclude_derivative(const GameDefinition& g) {
  bool any = false;
  for (const PlayerSpec& p : g.players) {
    if (p.feedback.max_derivative_order > 1)
      throw EngineError("UNSUPPORTED",
                        "player " + std::to_string(p.id) +
                            ": only first-order feedbacks can be reduced");
    if (p.feedback.max_derivative_order == 1) any = true;
  }
  if (!any) return g;

  if (g.coalitional())
    throw EngineError("UNSUPPORTED",
                      "derivative exclusion applies to plain games only");

  std::map<std::string, Expr> dphi_map;
  for (int j = 0; j < g.state_dim; ++j)
    dphi_map.emplace(VarRef{VarBase::dphi, -1, j}.canonical(), g.dynamics[j]);

  GameDefinition out = g;
  for (PlayerSpec& p : out.players) {
    FeedbackLaw& law = p.feedback;
    if (law.max_derivative_order != 1) continue;

    std::vector<Expr> substituted;
    substituted.reserve(law.exprs.size());
    for (const Expr& e : law.exprs)
      substituted.push_back(substitute(e, dphi_map));

    std::vector<Expr> direct;
    bool all_direct = true;
    for (int c = 0; c < p.control_dim && all_direct; ++c) {
      const Expr& rel = substituted[static_cast<std::size_t>(c)];
      const std::string own = VarRef{VarBase::u, p.id, c}.canonical();
      const auto parts = affine_in(rel, own);
      if (!parts || detail::mentions_own_u(parts->constant, p.id) ||
          detail::mentions_own_u(parts->coefficient, p.id)) {
        all_direct = false;
        break;
      }
      if (law.form == FeedbackForm::direct) {
        // u = p + q*u  =>  u = p / (1 - q)
        Expr denom = mk_sub(Expr::number(1.0), parts->coefficient);
        if (is_literal_zero(denom))
          throw EngineError("SINGULAR_SUBSTITUTION",
                            "player " + std::to_string(p.id) +
                                ": control coefficient 1 - q vanishes "
                                "identically after substitution");
        direct.push_back(mk_div(parts->constant, std::move(denom)));
      } else if (law.form == FeedbackForm::inverse) {
        // uo = p + q*u  =>  u = (uo - p) / q
        if (is_literal_zero(parts->coefficient))
          throw EngineError("SINGULAR_SUBSTITUTION",
                            "player " + std::to_string(p.id) +
                                ": control coefficient vanishes identically "
                                "after substitution");
        direct.push_back(
            mk_div(mk_sub(Expr::variable({VarBase::uo, p.id, c}),
                          parts->constant),
                   parts->coefficient));
      } else {
        all_direct = false;
      }
    }

    if (all_direct) {
      law.form = FeedbackForm::direct;
      law.exprs = std::move(direct);
    } else {
      // Fall back to an implicit residual law.
      std::vector<Expr> residuals;
      residuals.reserve(substituted.size());
      for (int c = 0; c < p.control_dim; ++c) {
        const Expr& rel = substituted[static_cast<std::size_t>(c)];
        switch (law.form) {
          case FeedbackForm::direct:
            residuals.push_back(
                mk_sub(Expr::variable({VarBase::u, p.id, c}), rel));
            break;
          case FeedbackForm::inverse:
            residuals.push_back(
                mk_sub(rel, Expr::variable({VarBase::uo, p.id, c})));
            break;
          case FeedbackForm::implicit:
            residuals.push_back(rel);
            break;
        }
      }
      law.form = FeedbackForm::implicit;
      law.exprs = std::move(residuals);
    }
    law.max_derivative_order = 0;
  }
  return out;
}

}  // namespace igame
