#pragma once

// Scans candidate quantities Z along a trajectory for time-independence or
// closed affine dynamics dZ/dt = c0 + c1*Z (left differences on the grid,
// matching the engine's convention). Detected candidates are the run's
// structural regularities; the scan also offers a perturbation-stability
// harness over seeded scenario offsets.

#include <Eigen/Dense>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "engine.hpp"
#include "expr.hpp"
#include "model.hpp"
#include "rewrite.hpp"
#include "rng.hpp"

namespace igame {

struct QuantityCandidate {
  std::string name;
  Expr expr = Expr::number(0.0);  // over {t, phi, u, uo, eps}
};

enum class OmenVerdict { invariant, closed_dynamics, neither };

inline const char* to_string(OmenVerdict v) {
  switch (v) {
    case OmenVerdict::invariant:        return "INVARIANT";
    case OmenVerdict::closed_dynamics:  return "CLOSED_DYNAMICS";
    case OmenVerdict::neither:          return "NEITHER";
  }
  return "?";
}

struct OmenTolerances {
  double invariance_rel = 1e-6;
  // Closed-dynamics residual cutoff is scale-aware:
  // closed_abs_scale * (1 + max|Z|).
  double closed_abs_scale = 1e-6;
};

struct OmenEntry {
  std::string name;
  OmenVerdict verdict = OmenVerdict::neither;
  double relative_variation = 0.0;
  std::optional<double> c0;
  std::optional<double> c1;
  std::optional<double> residual_rms;
  double t_first = 0.0;
  double t_last = 0.0;
  int sample_count = 0;
  std::optional<std::string> error;  // evaluation failure, verdict NEITHER
};

struct OmenReport {
  std::vector<OmenEntry> entries;
};

// Z(t_k) for every sample. Binds t, h, phi, u, uo, eps columns.
inline std::vector<double> evaluate_quantity(const QuantityCandidate& q,
                                             const Trajectory& traj) {
  std::vector<double> series;
  series.reserve(traj.samples.size());
  Env env;
  for (const TrajectorySample& s : traj.samples) {
    env.set("t", s.t);
    env.set("h", traj.step);
    for (std::size_t j = 0; j < s.phi.size(); ++j)
      env.set(VarRef{VarBase::phi, -1, static_cast<int>(j)}.canonical(),
              s.phi[j]);
    detail::bind_values(env, VarBase::u, s.u);
    detail::bind_values(env, VarBase::uo, s.uo);
    detail::bind_values(env, VarBase::eps, s.eps);
    series.push_back(evaluate(q.expr, env));
  }
  return series;
}

// Relative variation (max-min)/max(1, |mean|); INVARIANT iff <= tol_rel.
inline std::pair<bool, double> test_invariance(
    const std::vector<double>& series, double tol_rel = 1e-6) {
  if (series.empty())
    throw std::invalid_argument("test_invariance: empty series");
  if (!(tol_rel > 0.0))
    throw std::invalid_argument("test_invariance: tol_rel must be positive");
  double lo = series[0], hi = series[0], sum = 0.0;
  for (double z : series) {
    lo = std::min(lo, z);
    hi = std::max(hi, z);
    sum += z;
  }
  const double mean = sum / static_cast<double>(series.size());
  const double variation = (hi - lo) / std::max(1.0, std::abs(mean));
  return {variation <= tol_rel, variation};
}

struct ZDynamicsFit {
  double c0 = 0.0;
  double c1 = 0.0;
  double residual_rms = 0.0;
};

// Least squares of the left-difference derivative (Z_{k+1}-Z_k)/h against
// (1, Z_k). Minimum-norm solution on degenerate designs, so a constant
// series yields (0, 0) exactly.
inline ZDynamicsFit fit_z_dynamics(const std::vector<double>& series,
                                   double h) {
  if (series.size() < 3)
    throw std::invalid_argument("fit_z_dynamics: need at least 3 samples");
  if (!(h > 0.0))
    throw std::invalid_argument("fit_z_dynamics: h must be positive");

  const int rows = static_cast<int>(series.size()) - 1;
  Eigen::MatrixXd X(rows, 2);
  Eigen::VectorXd y(rows);
  for (int k = 0; k < rows; ++k) {
    X(k, 0) = 1.0;
    X(k, 1) = series[static_cast<std::size_t>(k)];
    y(k) = (series[static_cast<std::size_t>(k) + 1] -
            series[static_cast<std::size_t>(k)]) /
           h;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  Eigen::Vector2d c = svd.solve(y);
  const Eigen::VectorXd resid = X * c - y;
  ZDynamicsFit fit;
  fit.c0 = c(0);
  fit.c1 = c(1);
  fit.residual_rms = std::sqrt(resid.squaredNorm() / rows);
  return fit;
}

// Verdict precedence: INVARIANT over CLOSED_DYNAMICS over NEITHER.
inline OmenReport scan_omens(const std::vector<QuantityCandidate>& candidates,
                             const Trajectory& traj,
                             const OmenTolerances& tol = {}) {
  OmenReport report;
  for (const QuantityCandidate& q : candidates) {
    OmenEntry entry;
    entry.name = q.name;
    try {
      const std::vector<double> series = evaluate_quantity(q, traj);
      if (series.empty())
        throw std::invalid_argument("empty trajectory");
      entry.sample_count = static_cast<int>(series.size());
      entry.t_first = traj.samples.front().t;
      entry.t_last = traj.samples.back().t;

      const auto [flat, variation] =
          test_invariance(series, tol.invariance_rel);
      entry.relative_variation = variation;

      double zmax = 0.0;
      for (double z : series) zmax = std::max(zmax, std::abs(z));

      if (series.size() >= 3) {
        const ZDynamicsFit fit = fit_z_dynamics(series, traj.step);
        entry.c0 = fit.c0;
        entry.c1 = fit.c1;
        entry.residual_rms = fit.residual_rms;
        const bool closed =
            fit.residual_rms <= tol.closed_abs_scale * (1.0 + zmax);
        entry.verdict = flat ? OmenVerdict::invariant
                        : closed ? OmenVerdict::closed_dynamics
                                 : OmenVerdict::neither;
      } else {
        entry.verdict =
            flat ? OmenVerdict::invariant : OmenVerdict::neither;
      }
    } catch (const std::exception& e) {
      entry.verdict = OmenVerdict::neither;
      entry.error = e.what();
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Verdict stability under scenario perturbation. Each trial adds a constant
// offset, uniform in [-delta, delta), to every scenario component (drawn
// player-major, component-minor from SplitMix64), re-simulates, re-scans,
// and counts verdict flips against the unperturbed report. A trial whose
// simulation or scan fails counts as a flip.

struct StabilityEntry {
  std::string name;
  OmenVerdict base_verdict = OmenVerdict::neither;
  int flips = 0;
  int trials = 0;
  double flip_rate = 0.0;
};

struct StabilityReport {
  std::vector<StabilityEntry> entries;
};

inline StabilityReport verdict_stability(
    const GameDefinition& g, const std::vector<QuantityCandidate>& candidates,
    int trials = 16, double delta = 1e-3, std::uint64_t seed = 0,
    const OmenTolerances& tol = {}) {
  if (trials < 1)
    throw std::invalid_argument("verdict_stability: trials must be >= 1");

  const SimulationResult base_run = simulate(g);
  const OmenReport base = scan_omens(candidates, base_run.value(), tol);

  StabilityReport report;
  for (const OmenEntry& e : base.entries)
    report.entries.push_back({e.name, e.verdict, 0, trials, 0.0});

  SplitMix64 rng(seed);
  for (int trial = 0; trial < trials; ++trial) {
    GameDefinition perturbed = g;
    for (auto& player_exprs : perturbed.scenario.uo)
      for (Expr& e : player_exprs)
        e = mk_add(e, Expr::number(rng.next_in(-delta, delta)));

    bool failed = false;
    OmenReport scan;
    try {
      const SimulationResult run = simulate(perturbed);
      scan = scan_omens(candidates, run.value(), tol);
    } catch (const std::exception&) {
      failed = true;
    }

    for (std::size_t i = 0; i < report.entries.size(); ++i) {
      const bool flipped =
          failed || scan.entries[i].error.has_value() ||
          scan.entries[i].verdict != report.entries[i].base_verdict;
      if (flipped) ++report.entries[i].flips;
    }
  }
  for (StabilityEntry& e : report.entries)
    e.flip_rate = static_cast<double>(e.flips) / e.trials;
  return report;
}

}  // namespace igame
