#pragma once

// Prediction unraveling over a simulated run. At each anchor the observer
// issues a baseline forecast of the other players' controls, tracks how
// realized controls deviate from forecasts that have come due, fits an
// affine state-feedback model to those deviations, and issues a corrected
// forecast. The same machinery feeds the strategic pipeline: a long-term
// rollout of the associated ordinary game overridden window-by-window with
// the corrected short-term segments.
//
// Throughout, forecast controls are plugged directly into the dynamics:
// from the observer's viewpoint the others' controls are independent
// inputs of an ordinary game.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "engine.hpp"
#include "expr.hpp"
#include "model.hpp"

namespace igame {

class OracleError : public std::runtime_error {
 public:
  OracleError(std::string code, std::string message)
      : std::runtime_error(std::move(message)), code_(std::move(code)) {}

  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

enum class PredictorKind { frozen, linear, replay };

inline const char* to_string(PredictorKind k) {
  switch (k) {
    case PredictorKind::frozen: return "frozen";
    case PredictorKind::linear: return "linear";
    case PredictorKind::replay: return "replay";
  }
  return "?";
}

inline PredictorKind parse_predictor(const std::string& name) {
  if (name == "frozen") return PredictorKind::frozen;
  if (name == "linear") return PredictorKind::linear;
  if (name == "replay") return PredictorKind::replay;
  throw OracleError("UNKNOWN_PREDICTOR", "unknown predictor '" + name + "'");
}

struct OracleConfig {
  int observer = 1;
  PredictorKind predictor = PredictorKind::frozen;
  double dt = 0.0;         // forecast depth, a multiple of the grid step
  double depth_cap = 0.0;  // admissible depth; must be set explicitly
  int window = 200;        // fit window W; also the linear predictor's span
  double lambda = 1e-8;    // ridge strength
  bool pair_with_predicted_state = false;
  bool correct_observer = false;
};

// A forecast anchored at t0 covering the grid over (t0, t0+depth]. The
// constructor is private: every Prediction in the system went through
// make(), which enforces the depth cap.
class Prediction {
 public:
  static Prediction make(
      double t0, double depth, double depth_cap, std::string predictor,
      std::vector<int> players, std::vector<double> times,
      std::vector<std::vector<std::vector<double>>> controls,
      std::vector<std::vector<double>> state_path,
      std::vector<std::vector<double>> controls_at_anchor) {
    if (!(depth > 0.0))
      throw OracleError("DEPTH_CAP", "prediction depth must be positive");
    if (!(depth_cap > 0.0))
      throw OracleError("DEPTH_CAP", "depth cap must be configured (> 0)");
    if (depth > depth_cap * (1.0 + 1e-12))
      throw OracleError("DEPTH_CAP",
                        "requested depth " + std::to_string(depth) +
                            " exceeds the admissible cap " +
                            std::to_string(depth_cap));
    if (controls.size() != players.size() ||
        controls_at_anchor.size() != players.size())
      throw OracleError("SHAPE", "per-player forecast shapes disagree");
    for (const auto& per_player : controls)
      if (per_player.size() != times.size())
        throw OracleError("SHAPE", "forecast sample counts disagree");
    if (state_path.size() != times.size())
      throw OracleError("SHAPE", "state path sample count disagrees");
    return Prediction(t0, depth, std::move(predictor), std::move(players),
                      std::move(times), std::move(controls),
                      std::move(state_path), std::move(controls_at_anchor));
  }

  double t0() const { return t0_; }
  double depth() const { return depth_; }
  const std::string& predictor() const { return predictor_; }
  const std::vector<int>& players() const { return players_; }
  // Grid times t0+h .. t0+depth.
  const std::vector<double>& times() const { return times_; }
  // controls()[p][k][c]: player players()[p], sample times()[k], component c.
  const std::vector<std::vector<std::vector<double>>>& controls() const {
    return controls_;
  }
  const std::vector<std::vector<double>>& state_path() const {
    return state_path_;
  }
  // Forecast evaluated at the anchor itself (left endpoint of the first
  // step); needed to re-run the rollout, not part of the exported window.
  const std::vector<std::vector<double>>& controls_at_anchor() const {
    return controls_at_anchor_;
  }

 private:
  Prediction(double t0, double depth, std::string predictor,
             std::vector<int> players, std::vector<double> times,
             std::vector<std::vector<std::vector<double>>> controls,
             std::vector<std::vector<double>> state_path,
             std::vector<std::vector<double>> controls_at_anchor)
      : t0_(t0),
        depth_(depth),
        predictor_(std::move(predictor)),
        players_(std::move(players)),
        times_(std::move(times)),
        controls_(std::move(controls)),
        state_path_(std::move(state_path)),
        controls_at_anchor_(std::move(controls_at_anchor)) {}

  double t0_;
  double depth_;
  std::string predictor_;
  std::vector<int> players_;
  std::vector<double> times_;
  std::vector<std::vector<std::vector<double>>> controls_;
  std::vector<std::vector<double>> state_path_;
  std::vector<std::vector<double>> controls_at_anchor_;
};

struct PredictionLog {
  double grid_t0 = 0.0;
  double h = 0.0;
  std::map<int, Prediction> anchors;  // grid index -> baseline prediction
};

struct DeviationSeries {
  std::vector<int> players;
  std::vector<double> times;
  std::vector<std::vector<double>> state;  // paired phi per sample
  // dev[p][k][c]: player players[p], sample times[k], component c
  std::vector<std::vector<std::vector<double>>> dev;
};

struct PlayerFit {
  int player = 0;
  std::vector<double> a;               // control_dim
  std::vector<std::vector<double>> B;  // control_dim x state_dim
  double residual_rms = 0.0;
};

struct FeedbackFit {
  std::vector<PlayerFit> fits;
  int window_used = 0;
  double lambda = 0.0;
};

struct PlayerMetrics {
  int player = 0;
  double rmse = 0.0;
  double max_abs = 0.0;
};

struct PredictionMetrics {
  double state_rmse = 0.0;
  double state_max = 0.0;
  std::vector<PlayerMetrics> controls;
};

namespace detail {

inline int grid_index(const Trajectory& traj, double t, const char* what) {
  if (traj.samples.empty())
    throw OracleError("BAD_ANCHOR", std::string(what) + ": empty trajectory");
  const double h = traj.step;
  const double base = traj.samples.front().t;
  const long long k = std::llround((t - base) / h);
  if (k < 0 || k >= static_cast<long long>(traj.samples.size()) ||
      std::abs(base + static_cast<double>(k) * h - t) > 1e-9 * std::max(1.0, std::abs(t)))
    throw OracleError("BAD_ANCHOR",
                      std::string(what) + ": t = " + std::to_string(t) +
                          " is not a grid point of the trajectory");
  return static_cast<int>(k);
}

// dt left at 0 means "50 grid steps", the stock forecast depth.
inline double resolve_dt(double dt, double h) {
  return dt > 0.0 ? dt : 50.0 * h;
}

inline int depth_steps(double dt, double h) {
  const long long s = std::llround(dt / h);
  if (s < 1 || std::abs(static_cast<double>(s) * h - dt) >
                   1e-9 * std::max(1.0, std::abs(dt)))
    throw OracleError("CONFIG",
                      "dt must be a positive multiple of the grid step");
  return static_cast<int>(s);
}

inline void check_plain(const GameDefinition& g) {
  if (g.coalitional())
    throw OracleError("UNSUPPORTED",
                      "the prediction pipeline handles plain games only");
}

// Forecast of one player's control vector at an absolute time.
using ForecastFn = std::function<std::vector<double>(double)>;

}  // namespace detail

// Builds the baseline forecast at anchor t0 from the history traj_so_far
// (samples at and before the anchor are the observable record; later
// samples are never read). The state path rolls the dynamics under the
// forecast controls, with the observer following its declared scenario.
inline Prediction predict_baseline(const GameDefinition& g,
                                   const Trajectory& traj_so_far,
                                   PredictorKind predictor, double t0,
                                   const OracleConfig& config) {
  detail::check_plain(g);
  const int n = static_cast<int>(g.players.size());
  if (config.observer < 1 || config.observer > n)
    throw OracleError("CONFIG", "observer id out of range");
  const int k = detail::grid_index(traj_so_far, t0, "predict_baseline");
  const double h = traj_so_far.step;
  const int s = detail::depth_steps(detail::resolve_dt(config.dt, h), h);
  const double depth = static_cast<double>(s) * h;

  std::vector<int> players;
  for (const PlayerSpec& p : g.players)
    if (p.id != config.observer || config.correct_observer)
      players.push_back(p.id);

  Env sched;
  auto scenario_at = [&g, &sched](int player_id, double t) {
    sched.set("t", t);
    sched.set("h", g.horizon.step);
    const auto& exprs = g.scenario.uo[static_cast<std::size_t>(player_id - 1)];
    std::vector<double> out(exprs.size());
    for (std::size_t c = 0; c < exprs.size(); ++c)
      out[c] = evaluate(exprs[c], sched);
    return out;
  };

  // One forecast closure per predicted player.
  std::vector<detail::ForecastFn> forecast;
  for (int id : players) {
    const std::size_t pi = static_cast<std::size_t>(id - 1);
    const int dim = g.players[pi].control_dim;
    if (id == config.observer) {
      // The observer knows its own pure controls; its baseline is always
      // the declared scenario.
      forecast.push_back(
          [&scenario_at, id](double t) { return scenario_at(id, t); });
      continue;
    }
    switch (predictor) {
      case PredictorKind::frozen: {
        std::vector<double> held = traj_so_far.samples[k].u[pi];
        forecast.push_back([held](double) { return held; });
        break;
      }
      case PredictorKind::linear: {
        const int span = std::min(config.window, k + 1);
        if (span < 2)
          throw OracleError("INSUFFICIENT_HISTORY",
                            "linear predictor needs at least 2 observations");
        Eigen::MatrixXd X(span, 2);
        Eigen::MatrixXd Y(span, dim);
        for (int r = 0; r < span; ++r) {
          const TrajectorySample& smp =
              traj_so_far.samples[static_cast<std::size_t>(k - span + 1 + r)];
          X(r, 0) = 1.0;
          X(r, 1) = smp.t;
          for (int c = 0; c < dim; ++c) Y(r, c) = smp.u[pi][c];
        }
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(
            X, Eigen::ComputeThinU | Eigen::ComputeThinV);
        Eigen::MatrixXd coef = svd.solve(Y);  // 2 x dim
        forecast.push_back([coef, dim](double t) {
          std::vector<double> out(static_cast<std::size_t>(dim));
          for (int c = 0; c < dim; ++c) out[c] = coef(0, c) + coef(1, c) * t;
          return out;
        });
        break;
      }
      case PredictorKind::replay:
        forecast.push_back(
            [&scenario_at, id](double t) { return scenario_at(id, t); });
        break;
    }
  }

  // Roll the dynamics under the forecast controls.
  const int d = g.state_dim;
  std::vector<double> phi = traj_so_far.samples[static_cast<std::size_t>(k)].phi;
  std::vector<std::vector<std::vector<double>>> controls(players.size());
  std::vector<std::vector<double>> at_anchor(players.size());
  std::vector<std::vector<double>> state_path;
  std::vector<double> times;

  for (std::size_t p = 0; p < players.size(); ++p)
    at_anchor[p] = forecast[p](t0);

  Env env;
  for (int o = 0; o < s; ++o) {
    const double tau = t0 + static_cast<double>(o) * h;
    env.set("t", tau);
    env.set("h", h);
    for (int j = 0; j < d; ++j)
      env.set(VarRef{VarBase::phi, -1, j}.canonical(), phi[j]);
    for (std::size_t p = 0; p < players.size(); ++p) {
      const std::vector<double> u = o == 0 ? at_anchor[p] : forecast[p](tau);
      for (std::size_t c = 0; c < u.size(); ++c)
        env.set(VarRef{VarBase::u, players[p], static_cast<int>(c)}.canonical(),
                u[c]);
    }
    if (!config.correct_observer) {
      const std::vector<double> uobs = scenario_at(config.observer, tau);
      for (std::size_t c = 0; c < uobs.size(); ++c)
        env.set(VarRef{VarBase::u, config.observer, static_cast<int>(c)}
                    .canonical(),
                uobs[c]);
    }
    std::vector<double> next(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
      next[j] = phi[j] + h * evaluate(g.dynamics[j], env);
      if (!std::isfinite(next[j]))
        throw EngineError("NON_FINITE_STATE",
                          "forecast rollout diverged at t = " +
                              std::to_string(tau + h));
    }
    phi = std::move(next);
    const double t_next = t0 + static_cast<double>(o + 1) * h;
    times.push_back(t_next);
    state_path.push_back(phi);
    for (std::size_t p = 0; p < players.size(); ++p)
      controls[p].push_back(forecast[p](t_next));
  }

  return Prediction::make(t0, depth, config.depth_cap, to_string(predictor),
                          std::move(players), std::move(times),
                          std::move(controls), std::move(state_path),
                          std::move(at_anchor));
}

// Deviations d_i(t) = u_i(t) - (forecast of u_i at t issued at t - depth),
// for every grid point whose depth-old forecast exists in the log. A
// missing anchor strictly inside the log's coverage is an error.
inline DeviationSeries deviation_series(const PredictionLog& log,
                                        const Trajectory& traj,
                                        const OracleConfig& config) {
  DeviationSeries out;
  if (log.anchors.empty()) return out;

  const double h = traj.step;
  const int s = detail::depth_steps(detail::resolve_dt(config.dt, h), h);
  const int first_anchor = log.anchors.begin()->first;
  const int last_anchor = log.anchors.rbegin()->first;
  const int last_sample = static_cast<int>(traj.samples.size()) - 1;

  out.players = log.anchors.begin()->second.players();
  out.dev.resize(out.players.size());

  for (int j = first_anchor + s; j <= std::min(last_anchor + s, last_sample);
       ++j) {
    const auto it = log.anchors.find(j - s);
    if (it == log.anchors.end())
      throw OracleError("GAP_IN_LOG",
                        "no forecast anchored at grid index " +
                            std::to_string(j - s));
    const Prediction& p = it->second;
    if (p.players() != out.players)
      throw OracleError("GAP_IN_LOG",
                        "forecast player sets differ across the log");
    if (static_cast<int>(p.times().size()) < s)
      throw OracleError("GAP_IN_LOG",
                        "forecast depth shorter than the configured dt");
    const TrajectorySample& smp = traj.samples[static_cast<std::size_t>(j)];
    out.times.push_back(smp.t);
    out.state.push_back(config.pair_with_predicted_state
                            ? p.state_path()[static_cast<std::size_t>(s - 1)]
                            : smp.phi);
    for (std::size_t pi = 0; pi < out.players.size(); ++pi) {
      const std::size_t player_idx =
          static_cast<std::size_t>(out.players[pi] - 1);
      const std::vector<double>& realized = smp.u[player_idx];
      const std::vector<double>& predicted =
          p.controls()[pi][static_cast<std::size_t>(s - 1)];
      std::vector<double> dv(realized.size());
      for (std::size_t c = 0; c < realized.size(); ++c)
        dv[c] = realized[c] - predicted[c];
      out.dev[pi].push_back(std::move(dv));
    }
  }
  return out;
}

// Ridge least squares of deviations against (1, phi) over the last
// `window` samples, per player and control component. Solved through an
// SVD of the lambda-augmented system, so degenerate designs return the
// minimum-norm coefficients.
inline FeedbackFit fit_interactivity(const DeviationSeries& dev, int window,
                                     double lambda) {
  const int total = static_cast<int>(dev.times.size());
  const int used = std::min(window, total);
  const int d = total > 0 ? static_cast<int>(dev.state[0].size()) : 0;
  if (used < d + 1)
    throw OracleError("INSUFFICIENT_SAMPLES",
                      "fit needs at least state_dim + 1 deviation samples");
  if (lambda < 0.0)
    throw OracleError("CONFIG", "lambda must be non-negative");

  const int first = total - used;
  const int cols = 1 + d;
  Eigen::MatrixXd A(used + cols, cols);
  A.setZero();
  for (int r = 0; r < used; ++r) {
    A(r, 0) = 1.0;
    for (int j = 0; j < d; ++j)
      A(r, 1 + j) = dev.state[static_cast<std::size_t>(first + r)][
          static_cast<std::size_t>(j)];
  }
  const double sq = std::sqrt(lambda);
  for (int j = 0; j < cols; ++j) A(used + j, j) = sq;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(
      A, Eigen::ComputeThinU | Eigen::ComputeThinV);

  FeedbackFit out;
  out.window_used = used;
  out.lambda = lambda;
  for (std::size_t pi = 0; pi < dev.players.size(); ++pi) {
    const int m = dev.dev[pi].empty()
                      ? 0
                      : static_cast<int>(dev.dev[pi][0].size());
    PlayerFit fit;
    fit.player = dev.players[pi];
    fit.a.resize(static_cast<std::size_t>(m));
    fit.B.assign(static_cast<std::size_t>(m),
                 std::vector<double>(static_cast<std::size_t>(d), 0.0));
    double sq_err = 0.0;
    Eigen::VectorXd b(used + cols);
    for (int c = 0; c < m; ++c) {
      b.setZero();
      for (int r = 0; r < used; ++r)
        b(r) = dev.dev[pi][static_cast<std::size_t>(first + r)][
            static_cast<std::size_t>(c)];
      Eigen::VectorXd theta = svd.solve(b);
      fit.a[static_cast<std::size_t>(c)] = theta(0);
      for (int j = 0; j < d; ++j)
        fit.B[static_cast<std::size_t>(c)][static_cast<std::size_t>(j)] =
            theta(1 + j);
      for (int r = 0; r < used; ++r) {
        double pred = theta(0);
        for (int j = 0; j < d; ++j)
          pred += theta(1 + j) *
                  dev.state[static_cast<std::size_t>(first + r)][
                      static_cast<std::size_t>(j)];
        const double err =
            dev.dev[pi][static_cast<std::size_t>(first + r)][
                static_cast<std::size_t>(c)] -
            pred;
        sq_err += err * err;
      }
    }
    fit.residual_rms =
        m > 0 ? std::sqrt(sq_err / (static_cast<double>(used) * m)) : 0.0;
    out.fits.push_back(std::move(fit));
  }
  return out;
}

// Corrected forecast: controls u°_baseline + a + B*phi_hat with phi_hat
// integrated jointly under those controls.
inline Prediction predict_corrected(const GameDefinition& g,
                                    const Trajectory& traj_so_far,
                                    const Prediction& baseline,
                                    const FeedbackFit& fit,
                                    const OracleConfig& config) {
  detail::check_plain(g);
  const int k =
      detail::grid_index(traj_so_far, baseline.t0(), "predict_corrected");
  const double h = traj_so_far.step;
  const int s = static_cast<int>(baseline.times().size());
  const int d = g.state_dim;

  // The fit must cover exactly the baseline's player set.
  std::vector<const PlayerFit*> by_player(baseline.players().size(), nullptr);
  for (std::size_t pi = 0; pi < baseline.players().size(); ++pi) {
    for (const PlayerFit& f : fit.fits)
      if (f.player == baseline.players()[pi]) by_player[pi] = &f;
    if (!by_player[pi])
      throw OracleError("PLAYER_SET",
                        "fit lacks player " +
                            std::to_string(baseline.players()[pi]));
  }

  Env sched;
  auto scenario_at = [&g, &sched](int player_id, double t) {
    sched.set("t", t);
    sched.set("h", g.horizon.step);
    const auto& exprs = g.scenario.uo[static_cast<std::size_t>(player_id - 1)];
    std::vector<double> out(exprs.size());
    for (std::size_t c = 0; c < exprs.size(); ++c)
      out[c] = evaluate(exprs[c], sched);
    return out;
  };

  auto corrected_control = [&](std::size_t pi, int offset,
                               const std::vector<double>& phi) {
    // offset 0 = anchor, offsets 1..s = exported window
    const std::vector<double>& base =
        offset == 0 ? baseline.controls_at_anchor()[pi]
                    : baseline.controls()[pi][static_cast<std::size_t>(offset - 1)];
    const PlayerFit& f = *by_player[pi];
    std::vector<double> out(base.size());
    for (std::size_t c = 0; c < base.size(); ++c) {
      double corr = f.a[c];
      for (int j = 0; j < d; ++j)
        corr += f.B[c][static_cast<std::size_t>(j)] * phi[static_cast<std::size_t>(j)];
      out[c] = base[c] + corr;
    }
    return out;
  };

  std::vector<double> phi = traj_so_far.samples[static_cast<std::size_t>(k)].phi;
  std::vector<std::vector<std::vector<double>>> controls(
      baseline.players().size());
  std::vector<std::vector<double>> at_anchor(baseline.players().size());
  std::vector<std::vector<double>> state_path;

  for (std::size_t pi = 0; pi < baseline.players().size(); ++pi)
    at_anchor[pi] = corrected_control(pi, 0, phi);

  Env env;
  for (int o = 0; o < s; ++o) {
    const double tau = baseline.t0() + static_cast<double>(o) * h;
    env.set("t", tau);
    env.set("h", h);
    for (int j = 0; j < d; ++j)
      env.set(VarRef{VarBase::phi, -1, j}.canonical(),
              phi[static_cast<std::size_t>(j)]);
    for (std::size_t pi = 0; pi < baseline.players().size(); ++pi) {
      const std::vector<double> u = corrected_control(pi, o, phi);
      for (std::size_t c = 0; c < u.size(); ++c)
        env.set(VarRef{VarBase::u, baseline.players()[pi],
                       static_cast<int>(c)}.canonical(),
                u[c]);
    }
    if (!config.correct_observer) {
      const std::vector<double> uobs = scenario_at(config.observer, tau);
      for (std::size_t c = 0; c < uobs.size(); ++c)
        env.set(VarRef{VarBase::u, config.observer, static_cast<int>(c)}
                    .canonical(),
                uobs[c]);
    }
    std::vector<double> next(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
      next[static_cast<std::size_t>(j)] =
          phi[static_cast<std::size_t>(j)] + h * evaluate(g.dynamics[j], env);
      if (!std::isfinite(next[static_cast<std::size_t>(j)]))
        throw EngineError("NON_FINITE_STATE",
                          "corrected rollout diverged at t = " +
                              std::to_string(tau + h));
    }
    phi = std::move(next);
    state_path.push_back(phi);
    for (std::size_t pi = 0; pi < baseline.players().size(); ++pi)
      controls[pi].push_back(corrected_control(pi, o + 1, phi));
  }

  return Prediction::make(
      baseline.t0(), baseline.depth(), config.depth_cap,
      baseline.predictor() + "+corrected", baseline.players(),
      baseline.times(), std::move(controls), std::move(state_path),
      std::move(at_anchor));
}

// RMSE and max-abs error of a forecast against the realized trajectory.
inline PredictionMetrics evaluate_prediction(const Prediction& p,
                                             const Trajectory& traj) {
  const int k = detail::grid_index(traj, p.t0(), "evaluate_prediction");
  const int s = static_cast<int>(p.times().size());
  if (k + s > static_cast<int>(traj.samples.size()) - 1)
    throw OracleError("WINDOW_NOT_COVERED",
                      "trajectory ends before the forecast window does");

  PredictionMetrics out;
  double state_sq = 0.0;
  int state_terms = 0;
  for (int o = 1; o <= s; ++o) {
    const TrajectorySample& smp =
        traj.samples[static_cast<std::size_t>(k + o)];
    const std::vector<double>& predicted =
        p.state_path()[static_cast<std::size_t>(o - 1)];
    for (std::size_t j = 0; j < smp.phi.size(); ++j) {
      const double err = predicted[j] - smp.phi[j];
      state_sq += err * err;
      out.state_max = std::max(out.state_max, std::abs(err));
      ++state_terms;
    }
  }
  out.state_rmse = state_terms > 0 ? std::sqrt(state_sq / state_terms) : 0.0;

  for (std::size_t pi = 0; pi < p.players().size(); ++pi) {
    PlayerMetrics pm;
    pm.player = p.players()[pi];
    double sq = 0.0;
    int terms = 0;
    for (int o = 1; o <= s; ++o) {
      const TrajectorySample& smp =
          traj.samples[static_cast<std::size_t>(k + o)];
      const std::vector<double>& realized =
          smp.u[static_cast<std::size_t>(pm.player - 1)];
      const std::vector<double>& predicted =
          p.controls()[pi][static_cast<std::size_t>(o - 1)];
      for (std::size_t c = 0; c < realized.size(); ++c) {
        const double err = predicted[c] - realized[c];
        sq += err * err;
        pm.max_abs = std::max(pm.max_abs, std::abs(err));
        ++terms;
      }
    }
    pm.rmse = terms > 0 ? std::sqrt(sq / terms) : 0.0;
    out.controls.push_back(pm);
  }
  return out;
}

// Max over the grid, players, and components of |u_i(t) - scenario_i(t)|:
// zero exactly when the run is its scenario's performance.
inline double tactical_divergence(const Trajectory& traj,
                                  const Scenario& scenario) {
  if (traj.samples.empty()) return 0.0;
  if (traj.coalitional)
    throw std::invalid_argument(
        "tactical_divergence compares per-player controls; coalition "
        "trajectories record coalition controls instead");
  Env env;
  double worst = 0.0;
  for (const TrajectorySample& smp : traj.samples) {
    env.set("t", smp.t);
    env.set("h", traj.step);
    if (smp.u.size() != scenario.uo.size())
      throw std::invalid_argument(
          "trajectory and scenario disagree on the player count");
    for (std::size_t i = 0; i < scenario.uo.size(); ++i)
      for (std::size_t c = 0; c < scenario.uo[i].size(); ++c)
        worst = std::max(worst, std::abs(smp.u[i][c] -
                                         evaluate(scenario.uo[i][c], env)));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// The anchor loop

struct AnchorRecord {
  int index = 0;
  double t0 = 0.0;
  bool has_corrected = false;
  std::optional<PredictionMetrics> baseline_metrics;
  std::optional<PredictionMetrics> corrected_metrics;
};

struct PredictionRun {
  PredictionLog log;                    // baseline forecasts
  std::map<int, Prediction> corrected;  // by anchor index
  DeviationSeries deviations;
  std::optional<FeedbackFit> last_fit;
  std::vector<AnchorRecord> anchors;
  struct Aggregate {
    int compared_anchors = 0;  // anchors with both metrics
    double baseline_state_rmse = 0.0;   // mean of per-anchor RMSEs
    double corrected_state_rmse = 0.0;
    int improved = 0;  // corrected strictly below baseline
    double improved_fraction = 0.0;
  } aggregate;
};

// Runs the full unraveling loop over an already-realized trajectory:
// anchor at every grid point, baseline forecast, deviation bookkeeping,
// affine fit once a full window of deviations exists, corrected forecast,
// and per-anchor evaluation wherever the realized run covers the window.
inline PredictionRun run_prediction_loop(const GameDefinition& g,
                                         const Trajectory& traj,
                                         const OracleConfig& config) {
  detail::check_plain(g);
  if (traj.samples.empty())
    throw OracleError("INSUFFICIENT_HISTORY", "empty trajectory");
  const double h = traj.step;
  const int s = detail::depth_steps(detail::resolve_dt(config.dt, h), h);
  const int last = static_cast<int>(traj.samples.size()) - 1;
  const int first_anchor = config.predictor == PredictorKind::linear ? 1 : 0;

  PredictionRun run;
  run.log.grid_t0 = traj.samples.front().t;
  run.log.h = h;

  DeviationSeries& dev = run.deviations;

  // History prefix visible at anchor k: samples 0..k.
  Trajectory history;
  history.game_name = traj.game_name;
  history.step = traj.step;
  history.coalitional = traj.coalitional;
  history.eps_recorded = traj.eps_recorded;

  history.samples.assign(traj.samples.begin(),
                         traj.samples.begin() + first_anchor);

  for (int k = first_anchor; k <= last; ++k) {
    history.samples.push_back(traj.samples[static_cast<std::size_t>(k)]);
    const double t0 = traj.samples[static_cast<std::size_t>(k)].t;

    // A forecast issued s steps ago has just come due: record deviations.
    if (k - s >= first_anchor) {
      const auto it = run.log.anchors.find(k - s);
      if (it != run.log.anchors.end()) {
        const Prediction& p = it->second;
        const TrajectorySample& smp = traj.samples[static_cast<std::size_t>(k)];
        if (dev.players.empty()) dev.players = p.players();
        dev.times.push_back(smp.t);
        dev.state.push_back(config.pair_with_predicted_state
                                ? p.state_path().back()
                                : smp.phi);
        if (dev.dev.empty()) dev.dev.resize(dev.players.size());
        for (std::size_t pi = 0; pi < dev.players.size(); ++pi) {
          const std::size_t idx = static_cast<std::size_t>(dev.players[pi] - 1);
          const std::vector<double>& realized = smp.u[idx];
          const std::vector<double>& predicted =
              p.controls()[pi][static_cast<std::size_t>(s - 1)];
          std::vector<double> dv(realized.size());
          for (std::size_t c = 0; c < realized.size(); ++c)
            dv[c] = realized[c] - predicted[c];
          dev.dev[pi].push_back(std::move(dv));
        }
      }
    }

    Prediction baseline =
        predict_baseline(g, history, config.predictor, t0, config);

    AnchorRecord record;
    record.index = k;
    record.t0 = t0;

    // Correct only once a full fit window has accumulated.
    if (static_cast<int>(dev.times.size()) >= config.window) {
      FeedbackFit fit = fit_interactivity(dev, config.window, config.lambda);
      Prediction corrected =
          predict_corrected(g, history, baseline, fit, config);
      record.has_corrected = true;
      run.corrected.emplace(k, std::move(corrected));
      run.last_fit = std::move(fit);
    }

    if (k + s <= last) {
      record.baseline_metrics = evaluate_prediction(baseline, traj);
      if (record.has_corrected)
        record.corrected_metrics =
            evaluate_prediction(run.corrected.at(k), traj);
    }

    run.log.anchors.emplace(k, std::move(baseline));
    run.anchors.push_back(std::move(record));
  }

  auto& agg = run.aggregate;
  for (const AnchorRecord& r : run.anchors) {
    if (!r.baseline_metrics || !r.corrected_metrics) continue;
    ++agg.compared_anchors;
    agg.baseline_state_rmse += r.baseline_metrics->state_rmse;
    agg.corrected_state_rmse += r.corrected_metrics->state_rmse;
    if (r.corrected_metrics->state_rmse < r.baseline_metrics->state_rmse)
      ++agg.improved;
  }
  if (agg.compared_anchors > 0) {
    agg.baseline_state_rmse /= agg.compared_anchors;
    agg.corrected_state_rmse /= agg.compared_anchors;
    agg.improved_fraction =
        static_cast<double>(agg.improved) / agg.compared_anchors;
  }
  return run;
}

// ---------------------------------------------------------------------------
// Strategic pipeline: associated-game long-term rollout plus the corrected
// short-term segments, combined so each anchor's window overrides the
// long-term path (later anchors override earlier ones).

struct Prognosis {
  GameDefinition associated;
  Trajectory long_term;
  Trajectory realized;
  PredictionRun run;
  std::vector<std::vector<double>> combined_state;  // per grid point
  std::string combination_rule = "corrected-segment-overrides-window";
};

inline Prognosis strategic_analysis(const GameDefinition& g,
                                    const OracleConfig& config) {
  detail::check_plain(g);
  Prognosis out;
  out.associated = build_associated_game(g, VirtualDrive::zeros);
  out.long_term = simulate(out.associated).value();
  out.realized = simulate(g).value();
  out.run = run_prediction_loop(g, out.realized, config);

  out.combined_state.reserve(out.long_term.samples.size());
  for (const TrajectorySample& smp : out.long_term.samples)
    out.combined_state.push_back(smp.phi);
  const int last = static_cast<int>(out.combined_state.size()) - 1;
  for (const auto& [k, p] : out.run.corrected) {
    const int s = static_cast<int>(p.times().size());
    for (int o = 1; o <= s && k + o <= last; ++o)
      out.combined_state[static_cast<std::size_t>(k + o)] =
          p.state_path()[static_cast<std::size_t>(o - 1)];
  }
  return out;
}

}  // namespace igame
