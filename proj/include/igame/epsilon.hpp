#pragma once

// A posteriori recovery of eps parameters from an observed trajectory,
// inverting the known direct-form law u = f(uo, phi; eps) sample by sample.
// No temporal smoothing: each sample is solved on its own (optionally
// warm-started from the previous one).

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "engine.hpp"
#include "expr.hpp"
#include "model.hpp"

namespace igame {

enum class EpsFlag {
  identified,      // residual <= 1e-9
  inconsistent,    // converged but residual in (1e-9, accept_residual]
  unidentifiable,  // Jacobian smallest singular value below threshold
  no_convergence,  // solver exhausted without an acceptable residual
};

inline const char* to_string(EpsFlag f) {
  switch (f) {
    case EpsFlag::identified:      return "IDENTIFIED";
    case EpsFlag::inconsistent:    return "INCONSISTENT";
    case EpsFlag::unidentifiable:  return "UNIDENTIFIABLE";
    case EpsFlag::no_convergence:  return "NO_CONVERGENCE";
  }
  return "?";
}

struct EpsilonSample {
  double t = 0.0;
  int player = 0;
  // Absent (not zero-filled) when the sample is UNIDENTIFIABLE.
  std::optional<std::vector<double>> eps;
  EpsFlag flag = EpsFlag::unidentifiable;
  double residual = 0.0;  // max-norm of the law residual
};

struct EpsilonTrace {
  std::vector<EpsilonSample> samples;  // ordered by time, then player id
};

struct RecoverOptions {
  double sv_threshold = 1e-8;   // identifiability cutoff on sigma_min
  bool warm_start = true;       // seed each sample from the previous one
  double tol = 1e-9;            // residual for IDENTIFIED
  double accept_residual = 1e-6;  // least-squares acceptance (overdetermined)
  int max_iterations = 100;
  double fd_delta = 1e-7;
};

class EpsilonError : public std::runtime_error {
 public:
  EpsilonError(std::string code, std::string message)
      : std::runtime_error(std::move(message)), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Inverts each player's law at each sample for eps. Players with eps_dim 0
// produce no rows. Requires direct-form k=0 laws and eps_dim <= control_dim
// (square or overdetermined inversion only).
inline EpsilonTrace recover_epsilon(const GameDefinition& g,
                                    const Trajectory& traj,
                                    const RecoverOptions& opt = {}) {
  if (g.coalitional() || traj.coalitional)
    throw EpsilonError("UNSUPPORTED",
                       "eps recovery is defined for plain games only");
  for (const PlayerSpec& p : g.players) {
    if (p.eps_dim == 0) continue;
    if (p.feedback.form != FeedbackForm::direct ||
        p.feedback.max_derivative_order != 0)
      throw EpsilonError("UNSUPPORTED",
                         "player " + std::to_string(p.id) +
                             ": recovery requires direct-form k=0 laws "
                             "(apply exclude_derivative first)");
    if (p.eps_dim > p.control_dim)
      throw EpsilonError("UNSUPPORTED",
                         "player " + std::to_string(p.id) +
                             ": eps_dim exceeds control_dim");
  }

  const int n = static_cast<int>(g.players.size());
  EpsilonTrace trace;

  // Previous accepted eps per player, for warm starts.
  std::vector<std::optional<std::vector<double>>> warm(
      static_cast<std::size_t>(n));

  for (const TrajectorySample& sample : traj.samples) {
    if (static_cast<int>(sample.u.size()) != n ||
        static_cast<int>(sample.uo.size()) != n ||
        static_cast<int>(sample.phi.size()) != g.state_dim)
      throw EpsilonError("MISSING_COLUMNS",
                         "trajectory lacks per-player u/uo columns");

    for (int i = 0; i < n; ++i) {
      const PlayerSpec& p = g.players[i];
      if (p.eps_dim == 0) continue;
      const int m = p.control_dim;
      const int e = p.eps_dim;
      if (static_cast<int>(sample.u[i].size()) != m ||
          static_cast<int>(sample.uo[i].size()) != m)
        throw EpsilonError("MISSING_COLUMNS",
                           "trajectory lacks player " + std::to_string(p.id) +
                               " control columns");

      Env env;
      env.set("t", sample.t);
      env.set("h", traj.step);
      for (int j = 0; j < g.state_dim; ++j)
        env.set(VarRef{VarBase::phi, -1, j}.canonical(), sample.phi[j]);
      for (int c = 0; c < m; ++c)
        env.set(VarRef{VarBase::uo, p.id, c}.canonical(), sample.uo[i][c]);

      std::vector<std::string> unknowns(static_cast<std::size_t>(e));
      for (int c = 0; c < e; ++c)
        unknowns[c] = VarRef{VarBase::eps, p.id, c}.canonical();

      std::vector<double> x =
          opt.warm_start && warm[i] ? *warm[i]
                                    : std::vector<double>(e, 0.0);
      for (int c = 0; c < e; ++c) env.set(unknowns[c], x[c]);

      auto residual_norm = [&]() {
        double norm = 0.0;
        for (int c = 0; c < m; ++c)
          norm = std::max(norm, std::abs(evaluate(p.feedback.exprs[c], env) -
                                         sample.u[i][c]));
        return norm;
      };

      EpsilonSample row;
      row.t = sample.t;
      row.player = p.id;

      try {
        Eigen::VectorXd r(m);
        Eigen::MatrixXd jac(m, e);
        double rnorm = residual_norm();
        bool degenerate = false;
        int iterations = 0;

        // The Jacobian is checked before the residual: a sample where eps
        // has no effect is unidentifiable even if the residual already
        // vanishes (e.g. a zero state under a linear-in-state law).
        while (true) {
          for (int c = 0; c < m; ++c) {
            r(c) = evaluate(p.feedback.exprs[c], env) - sample.u[i][c];
            for (int k = 0; k < e; ++k)
              jac(c, k) =
                  partial_fd(p.feedback.exprs[c], env, unknowns[k],
                             opt.fd_delta);
          }
          Eigen::JacobiSVD<Eigen::MatrixXd> svd(
              jac, Eigen::ComputeThinU | Eigen::ComputeThinV);
          if (svd.singularValues()(e - 1) < opt.sv_threshold) {
            degenerate = true;
            break;
          }
          if (rnorm <= opt.tol || iterations >= opt.max_iterations) break;
          Eigen::VectorXd dx = svd.solve(-r);

          double alpha = 1.0;
          bool accepted = false;
          for (int halving = 0; halving <= 20; ++halving) {
            for (int k = 0; k < e; ++k)
              env.set(unknowns[k], x[k] + alpha * dx(k));
            const double trial = residual_norm();
            if (trial < rnorm) {
              for (int k = 0; k < e; ++k) x[k] += alpha * dx(k);
              rnorm = trial;
              accepted = true;
              break;
            }
            alpha *= 0.5;
          }
          if (!accepted) break;  // stalled; classify by residual below
          ++iterations;
        }

        row.residual = rnorm;
        if (degenerate) {
          row.flag = EpsFlag::unidentifiable;
        } else if (rnorm <= opt.tol) {
          row.flag = EpsFlag::identified;
          row.eps = x;
          warm[i] = x;
        } else if (rnorm <= opt.accept_residual) {
          row.flag = EpsFlag::inconsistent;
          row.eps = x;
          warm[i] = x;
        } else {
          row.flag = EpsFlag::no_convergence;
        }
      } catch (const EvalError& err) {
        row.flag = EpsFlag::no_convergence;
        row.residual = std::numeric_limits<double>::infinity();
      }

      trace.samples.push_back(std::move(row));
    }
  }
  return trace;
}

}  // namespace igame
