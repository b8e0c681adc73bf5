#pragma once

// Game definitions: state dimension, dynamics, per-player feedback laws,
// optional coalitions, horizon, scenario, and ground-truth eps. Also the
// structural validator and the associated-ordinary-game construction that
// promotes eps parameters to controls of virtual players.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "expr.hpp"
#include "rewrite.hpp"

namespace igame {

enum class FeedbackForm { direct, inverse, implicit };

inline const char* to_string(FeedbackForm f) {
  switch (f) {
    case FeedbackForm::direct:   return "direct";
    case FeedbackForm::inverse:  return "inverse";
    case FeedbackForm::implicit: return "implicit";
  }
  return "?";
}

// form=direct:   exprs[c] gives u[i][c] from (uo, phi, dphi, eps, t)
// form=inverse:  exprs[c] gives uo[i][c] from (u, phi, dphi, eps, t)
// form=implicit: exprs[c] is a residual that must vanish at each step
// max_derivative_order: 0 or 1; dphi[.] may appear only when it is 1.
struct FeedbackLaw {
  FeedbackForm form = FeedbackForm::direct;
  std::vector<Expr> exprs;
  int max_derivative_order = 0;

  bool operator==(const FeedbackLaw&) const = default;
};

struct PlayerSpec {
  int id = 0;  // 1-based, must equal position+1
  int control_dim = 0;
  FeedbackLaw feedback;
  int eps_dim = 0;

  bool operator==(const PlayerSpec&) const = default;
};

// exprs produce the coalition's joint control v[id][.] from member pure
// controls uo[j][.], member eps[j][.], phi and t. members is kept sorted.
struct CoalitionSpec {
  int id = 0;
  std::vector<int> members;
  int control_dim = 0;
  std::vector<Expr> exprs;

  bool operator==(const CoalitionSpec&) const = default;
};

struct Horizon {
  double t0 = 0.0;
  double t1 = 0.0;
  double step = 0.0;

  // Number of Euler steps; valid only when validate() accepts the horizon.
  int steps() const {
    return static_cast<int>(std::llround((t1 - t0) / step));
  }

  bool operator==(const Horizon&) const = default;
};

// Pure-control schedule: uo[i-1][c] is an expression in t alone.
struct Scenario {
  std::vector<std::vector<Expr>> uo;

  bool operator==(const Scenario&) const = default;
};

struct GameDefinition {
  std::string name;
  int state_dim = 0;
  std::vector<PlayerSpec> players;
  std::vector<Expr> dynamics;
  std::vector<CoalitionSpec> coalitions;  // empty for plain games
  Horizon horizon;
  Scenario scenario;
  // Ground-truth eps expressions over (t, phi), one list per player.
  std::optional<std::vector<std::vector<Expr>>> eps_truth;
  // Initial phi; empty means the zero vector.
  std::vector<double> initial_state;

  bool coalitional() const { return !coalitions.empty(); }

  std::vector<double> initial_phi() const {
    if (!initial_state.empty()) return initial_state;
    return std::vector<double>(static_cast<std::size_t>(state_dim), 0.0);
  }

  bool operator==(const GameDefinition&) const = default;
};

struct Diagnostic {
  std::string code;
  std::string path;
  std::string message;
};

class ModelError : public std::runtime_error {
 public:
  ModelError(std::string code, std::string message)
      : std::runtime_error(std::move(message)), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// ---------------------------------------------------------------------------
// Validation

namespace detail {

inline void collect_refs(const Expr& e, std::vector<VarRef>& out) {
  switch (e.kind()) {
    case Expr::Kind::number:
      return;
    case Expr::Kind::variable:
      out.push_back(e.var());
      return;
    default:
      for (const Expr& a : e.args()) collect_refs(a, out);
  }
}

inline std::vector<VarRef> refs_of(const Expr& e) {
  std::vector<VarRef> out;
  collect_refs(e, out);
  return out;
}

}  // namespace detail

inline std::vector<Diagnostic> validate(const GameDefinition& g) {
  std::vector<Diagnostic> out;
  auto add = [&](const char* code, std::string path, std::string message) {
    out.push_back({code, std::move(path), std::move(message)});
  };

  const int d = g.state_dim;
  const int n = static_cast<int>(g.players.size());
  const int m = static_cast<int>(g.coalitions.size());
  const bool coalitional = m > 0;

  if (d < 1) add("DIMENSION_MISMATCH", "state_dim", "state_dim must be >= 1");
  if (n < 1) add("DIMENSION_MISMATCH", "players", "at least one player required");

  // --- players and their feedback laws
  for (int idx = 0; idx < n; ++idx) {
    const PlayerSpec& p = g.players[idx];
    const std::string base = "players[" + std::to_string(idx) + "]";
    if (p.id != idx + 1)
      add("PLAYER_ID", base + ".id",
          "player ids must be 1..n in order; found " + std::to_string(p.id));
    if (p.control_dim < 0)
      add("DIMENSION_MISMATCH", base + ".control_dim",
          "control_dim must be >= 0");
    if (p.eps_dim < 0)
      add("DIMENSION_MISMATCH", base + ".eps_dim", "eps_dim must be >= 0");
    const FeedbackLaw& law = p.feedback;
    if (law.max_derivative_order != 0 && law.max_derivative_order != 1)
      add("DERIVATIVE_ORDER", base + ".feedback.max_derivative_order",
          "max_derivative_order must be 0 or 1");
    if (static_cast<int>(law.exprs.size()) != std::max(p.control_dim, 0))
      add("DIMENSION_MISMATCH", base + ".feedback.exprs",
          "law must have exactly control_dim expressions");
    for (std::size_t c = 0; c < law.exprs.size(); ++c) {
      const std::string path =
          base + ".feedback.exprs[" + std::to_string(c) + "]";
      for (const VarRef& r : detail::refs_of(law.exprs[c])) {
        switch (r.base) {
          case VarBase::time:
            break;
          case VarBase::step:
            add("FORBIDDEN_VARIABLE", path, "'h' not allowed in feedback laws");
            break;
          case VarBase::phi:
            if (r.j >= d)
              add("INDEX_RANGE", path, r.canonical() + " out of range");
            break;
          case VarBase::dphi:
            if (law.max_derivative_order != 1)
              add("DERIVATIVE_ORDER", path,
                  r.canonical() + " requires max_derivative_order = 1");
            if (r.j >= d)
              add("INDEX_RANGE", path, r.canonical() + " out of range");
            break;
          case VarBase::u:
            if (r.i > n)
              add("UNKNOWN_PLAYER", path, r.canonical() + ": no such player");
            else if (r.i != p.id)
              add("FOREIGN_REFERENCE", path,
                  r.canonical() + " belongs to another player");
            else {
              if (law.form == FeedbackForm::direct)
                add("SELF_REFERENCE", path,
                    "direct law for player " + std::to_string(p.id) +
                        " must not mention " + r.canonical());
              if (r.j >= p.control_dim)
                add("INDEX_RANGE", path, r.canonical() + " out of range");
            }
            break;
          case VarBase::uo:
            if (r.i > n)
              add("UNKNOWN_PLAYER", path, r.canonical() + ": no such player");
            else if (r.i != p.id)
              add("FOREIGN_REFERENCE", path,
                  r.canonical() + " belongs to another player");
            else {
              if (law.form == FeedbackForm::inverse)
                add("SELF_REFERENCE", path,
                    "inverse law for player " + std::to_string(p.id) +
                        " must not mention " + r.canonical());
              if (r.j >= p.control_dim)
                add("INDEX_RANGE", path, r.canonical() + " out of range");
            }
            break;
          case VarBase::eps:
            if (r.i != p.id)
              add("FOREIGN_REFERENCE", path,
                  r.canonical() + " belongs to another player");
            else if (r.j >= p.eps_dim)
              add("INDEX_RANGE", path, r.canonical() + " out of range");
            break;
          case VarBase::v:
            add("FORBIDDEN_VARIABLE", path,
                "coalition controls cannot appear in feedback laws");
            break;
        }
      }
    }
  }

  // --- coalitions
  for (int idx = 0; idx < m; ++idx) {
    const CoalitionSpec& c = g.coalitions[idx];
    const std::string base = "coalitions[" + std::to_string(idx) + "]";
    if (c.id != idx + 1)
      add("COALITION_ID", base + ".id",
          "coalition ids must be 1..m in order; found " + std::to_string(c.id));
    if (c.control_dim < 1)
      add("DIMENSION_MISMATCH", base + ".control_dim",
          "control_dim must be >= 1");
    if (c.members.empty())
      add("BAD_COALITION", base + ".members", "member set is empty");
    if (!std::is_sorted(c.members.begin(), c.members.end()) ||
        std::adjacent_find(c.members.begin(), c.members.end()) !=
            c.members.end())
      add("BAD_COALITION", base + ".members",
          "member ids must be strictly increasing");
    std::set<int> members(c.members.begin(), c.members.end());
    for (int j : c.members)
      if (j < 1 || j > n)
        add("UNKNOWN_PLAYER", base + ".members",
            "member " + std::to_string(j) + ": no such player");
    if (static_cast<int>(c.exprs.size()) != std::max(c.control_dim, 0))
      add("DIMENSION_MISMATCH", base + ".exprs",
          "coalition must have exactly control_dim expressions");
    for (std::size_t k = 0; k < c.exprs.size(); ++k) {
      const std::string path = base + ".exprs[" + std::to_string(k) + "]";
      for (const VarRef& r : detail::refs_of(c.exprs[k])) {
        switch (r.base) {
          case VarBase::time:
            break;
          case VarBase::phi:
            if (r.j >= d)
              add("INDEX_RANGE", path, r.canonical() + " out of range");
            break;
          case VarBase::uo:
          case VarBase::eps: {
            if (r.i < 1 || r.i > n) {
              add("UNKNOWN_PLAYER", path, r.canonical() + ": no such player");
              break;
            }
            if (!members.count(r.i)) {
              add("FOREIGN_REFERENCE", path,
                  r.canonical() + " does not belong to a coalition member");
              break;
            }
            const PlayerSpec& owner = g.players[r.i - 1];
            const int lim =
                r.base == VarBase::uo ? owner.control_dim : owner.eps_dim;
            if (r.j >= lim)
              add("INDEX_RANGE", path, r.canonical() + " out of range");
            break;
          }
          default:
            add("FORBIDDEN_VARIABLE", path,
                r.canonical() + " not allowed in coalition expressions");
            break;
        }
      }
    }
  }

  // --- dynamics
  if (static_cast<int>(g.dynamics.size()) != std::max(d, 0))
    add("DIMENSION_MISMATCH", "dynamics",
        "dynamics must have exactly state_dim expressions");
  for (std::size_t j = 0; j < g.dynamics.size(); ++j) {
    const std::string path = "dynamics[" + std::to_string(j) + "]";
    for (const VarRef& r : detail::refs_of(g.dynamics[j])) {
      switch (r.base) {
        case VarBase::time:
          break;
        case VarBase::phi:
          if (r.j >= d)
            add("INDEX_RANGE", path, r.canonical() + " out of range");
          break;
        case VarBase::u:
          if (coalitional) {
            add("MIXED_CONTROLS", path,
                "coalition games write dynamics over v[.][.], found " +
                    r.canonical());
          } else if (r.i > n) {
            add("UNKNOWN_PLAYER", path, r.canonical() + ": no such player");
          } else if (r.j >= g.players[r.i - 1].control_dim) {
            add("INDEX_RANGE", path, r.canonical() + " out of range");
          }
          break;
        case VarBase::v:
          if (!coalitional) {
            add("MIXED_CONTROLS", path,
                "plain games write dynamics over u[.][.], found " +
                    r.canonical());
          } else if (r.i > m) {
            add("UNKNOWN_COALITION", path,
                r.canonical() + ": no such coalition");
          } else if (r.j >= g.coalitions[r.i - 1].control_dim) {
            add("INDEX_RANGE", path, r.canonical() + " out of range");
          }
          break;
        default:
          add("FORBIDDEN_VARIABLE", path,
              r.canonical() + " not allowed in dynamics");
          break;
      }
    }
  }

  // --- horizon
  {
    const Horizon& hz = g.horizon;
    if (!(hz.step > 0.0))
      add("BAD_HORIZON", "horizon.step", "step must be positive");
    if (!(hz.t1 > hz.t0))
      add("BAD_HORIZON", "horizon.t1", "t1 must exceed t0");
    if (hz.step > 0.0 && hz.t1 > hz.t0) {
      const double ratio = (hz.t1 - hz.t0) / hz.step;
      const double rounded = std::round(ratio);
      const double tol =
          std::max(ratio, 1.0) * std::numeric_limits<double>::epsilon();
      if (rounded < 1.0 || std::abs(ratio - rounded) > tol)
        add("BAD_HORIZON", "horizon",
            "(t1 - t0)/step must be an integer (within 1 ulp)");
    }
  }

  // --- scenario
  if (static_cast<int>(g.scenario.uo.size()) != std::max(n, 0)) {
    add("DIMENSION_MISMATCH", "scenario.uo",
        "scenario must list pure controls for every player");
  } else {
    for (int i = 0; i < n; ++i) {
      const std::string base = "scenario.uo[" + std::to_string(i) + "]";
      if (static_cast<int>(g.scenario.uo[i].size()) !=
          std::max(g.players[i].control_dim, 0)) {
        add("DIMENSION_MISMATCH", base,
            "entry count must equal the player's control_dim");
        continue;
      }
      for (std::size_t c = 0; c < g.scenario.uo[i].size(); ++c) {
        for (const VarRef& r : detail::refs_of(g.scenario.uo[i][c]))
          if (r.base != VarBase::time)
            add("SCENARIO_FREE_VAR", base + "[" + std::to_string(c) + "]",
                "scenario expressions may reference t only, found " +
                    r.canonical());
      }
    }
  }

  // --- eps_truth
  if (g.eps_truth) {
    const auto& et = *g.eps_truth;
    if (static_cast<int>(et.size()) != std::max(n, 0)) {
      add("DIMENSION_MISMATCH", "eps_truth",
          "eps_truth must list expressions for every player");
    } else {
      for (int i = 0; i < n; ++i) {
        const std::string base = "eps_truth[" + std::to_string(i) + "]";
        if (static_cast<int>(et[i].size()) !=
            std::max(g.players[i].eps_dim, 0)) {
          add("DIMENSION_MISMATCH", base,
              "entry count must equal the player's eps_dim");
          continue;
        }
        for (std::size_t c = 0; c < et[i].size(); ++c) {
          for (const VarRef& r : detail::refs_of(et[i][c])) {
            if (r.base == VarBase::time) continue;
            if (r.base == VarBase::phi) {
              if (r.j >= d)
                add("INDEX_RANGE", base + "[" + std::to_string(c) + "]",
                    r.canonical() + " out of range");
              continue;
            }
            add("EPS_TRUTH_FREE_VAR", base + "[" + std::to_string(c) + "]",
                "eps_truth may reference t and phi only, found " +
                    r.canonical());
          }
        }
      }
    }
  }

  // --- initial state
  if (!g.initial_state.empty()) {
    if (static_cast<int>(g.initial_state.size()) != std::max(d, 0))
      add("DIMENSION_MISMATCH", "initial_state",
          "initial_state must have state_dim entries");
    for (double v : g.initial_state)
      if (!std::isfinite(v)) {
        add("NON_FINITE", "initial_state", "entries must be finite");
        break;
      }
  }

  return out;
}

// ---------------------------------------------------------------------------
// Associated ordinary game

// How the virtual players' control slots are driven in the constructed game:
//   zeros — identity laws with zero scenario (eps treated as 0)
//   truth — the game's eps_truth expressions become the virtual players'
//           direct laws, so simulating the associated game reproduces the
//           interactive game's trajectory exactly.
enum class VirtualDrive { zeros, truth };

namespace detail {

inline FeedbackLaw identity_law(int slot, int dim) {
  FeedbackLaw law;
  law.form = FeedbackForm::direct;
  law.max_derivative_order = 0;
  for (int c = 0; c < dim; ++c)
    law.exprs.push_back(Expr::variable({VarBase::uo, slot, c}));
  return law;
}

inline std::vector<Expr> zero_scenario(int dim) {
  return std::vector<Expr>(static_cast<std::size_t>(dim), Expr::number(0.0));
}

}  // namespace detail

// Builds the ordinary game with eps promoted to independent controls. For a
// plain n-player game the result has 2n control slots: slot i carries u°_i
// and slot n+i carries eps_i. For a coalition game each coalition gets one
// collective virtual slot holding the concatenated member eps vectors in
// ascending member-id order. The returned game is always plain.
inline GameDefinition build_associated_game(
    const GameDefinition& g, VirtualDrive drive = VirtualDrive::zeros) {
  const int n = static_cast<int>(g.players.size());

  const bool needs_truth = [&] {
    for (const PlayerSpec& p : g.players)
      if (p.eps_dim > 0) return true;
    return false;
  }();
  if (drive == VirtualDrive::truth && needs_truth && !g.eps_truth)
    throw ModelError("MISSING_EPS_TRUTH",
                     "truth drive requires eps_truth expressions");

  GameDefinition out;
  out.name = g.name + ".associated";
  out.state_dim = g.state_dim;
  out.horizon = g.horizon;
  out.initial_state = g.initial_state;

  // Real slots: identity laws, original scenario.
  for (int i = 0; i < n; ++i) {
    const PlayerSpec& p = g.players[i];
    out.players.push_back(
        {p.id, p.control_dim, detail::identity_law(p.id, p.control_dim), 0});
    out.scenario.uo.push_back(g.scenario.uo[i]);
  }

  auto virtual_slot = [&](int slot, int dim, std::vector<Expr> truth_exprs) {
    FeedbackLaw law;
    if (drive == VirtualDrive::truth && dim > 0) {
      law.form = FeedbackForm::direct;
      law.max_derivative_order = 0;
      law.exprs = std::move(truth_exprs);
    } else {
      law = detail::identity_law(slot, dim);
    }
    out.players.push_back({slot, dim, std::move(law), 0});
    out.scenario.uo.push_back(detail::zero_scenario(dim));
  };

  std::map<std::string, Expr> dyn_map;

  if (!g.coalitional()) {
    for (const PlayerSpec& p : g.players) {
      if (p.feedback.form != FeedbackForm::direct)
        throw ModelError("NON_DIRECT_FORM",
                         "player " + std::to_string(p.id) +
                             ": associated game requires direct-form laws");
      if (p.feedback.max_derivative_order != 0)
        throw ModelError("DERIVATIVE_ORDER",
                         "player " + std::to_string(p.id) +
                             ": apply exclude_derivative first (k must be 0)");
    }
    for (int i = 0; i < n; ++i) {
      const PlayerSpec& p = g.players[i];
      const int slot = n + p.id;
      std::vector<Expr> truth;
      if (drive == VirtualDrive::truth && p.eps_dim > 0) truth = (*g.eps_truth)[i];
      virtual_slot(slot, p.eps_dim, std::move(truth));

      // Rewrite the player's law over the new slots, then map the player's
      // realized control onto it for substitution into the dynamics.
      std::map<std::string, Expr> law_map;
      for (int c = 0; c < p.control_dim; ++c)
        law_map.emplace(VarRef{VarBase::uo, p.id, c}.canonical(),
                        Expr::variable({VarBase::u, p.id, c}));
      for (int c = 0; c < p.eps_dim; ++c)
        law_map.emplace(VarRef{VarBase::eps, p.id, c}.canonical(),
                        Expr::variable({VarBase::u, slot, c}));
      for (int c = 0; c < p.control_dim; ++c)
        dyn_map.emplace(VarRef{VarBase::u, p.id, c}.canonical(),
                        substitute(p.feedback.exprs[c], law_map));
    }
  } else {
    const int mcount = static_cast<int>(g.coalitions.size());
    for (int ci = 0; ci < mcount; ++ci) {
      const CoalitionSpec& coal = g.coalitions[ci];
      const int slot = n + coal.id;
      int total = 0;
      std::map<int, int> offset;  // member id -> first eps component
      for (int j : coal.members) {
        offset[j] = total;
        total += g.players[j - 1].eps_dim;
      }
      std::vector<Expr> truth;
      if (drive == VirtualDrive::truth && total > 0) {
        for (int j : coal.members)
          for (const Expr& e : (*g.eps_truth)[j - 1]) truth.push_back(e);
      }
      virtual_slot(slot, total, std::move(truth));

      std::map<std::string, Expr> coal_map;
      for (int j : coal.members) {
        const PlayerSpec& member = g.players[j - 1];
        for (int c = 0; c < member.control_dim; ++c)
          coal_map.emplace(VarRef{VarBase::uo, j, c}.canonical(),
                           Expr::variable({VarBase::u, j, c}));
        for (int c = 0; c < member.eps_dim; ++c)
          coal_map.emplace(VarRef{VarBase::eps, j, c}.canonical(),
                           Expr::variable({VarBase::u, slot, offset[j] + c}));
      }
      for (int c = 0; c < coal.control_dim; ++c)
        dyn_map.emplace(VarRef{VarBase::v, coal.id, c}.canonical(),
                        substitute(coal.exprs[c], coal_map));
    }
  }

  for (const Expr& e : g.dynamics) out.dynamics.push_back(substitute(e, dyn_map));

  return out;
}

}  // namespace igame
