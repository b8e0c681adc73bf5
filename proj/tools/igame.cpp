// Command-line front end: simulate, predict, estimate-eps, invariants,
// analyze. Exit codes: 0 success, 2 bad input or configuration, 3 numeric
// failure, 4 not enough data to produce the requested output.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>

#include <igame/igame.hpp>

namespace {

using namespace igame;

void emit(const std::string& out, const std::string& content) {
  if (out == "-") {
    std::fwrite(content.data(), 1, content.size(), stdout);
    return;
  }
  atomic_write(out, content);
}

struct SimulateArgs {
  std::string game;
  std::string out = "-";
  std::string format = "csv";
  unsigned long long seed = 0;
};

int cmd_simulate(const SimulateArgs& a) {
  const GameDefinition g = load_game(a.game);
  const SimulationResult res = simulate(g);
  if (res.failure) {
    if (!res.trajectory.samples.empty()) {
      const std::string content = a.format == "jsonl"
                                      ? trajectory_jsonl(res.trajectory)
                                      : trajectory_csv(res.trajectory);
      emit(a.out == "-" ? a.out : a.out + ".partial", content);
    }
    std::fprintf(stderr, "simulation failed at step %d: %s (%s)\n",
                 res.failure->at_step, res.failure->message.c_str(),
                 res.failure->code.c_str());
    return 3;
  }
  emit(a.out, a.format == "jsonl" ? trajectory_jsonl(res.trajectory)
                                  : trajectory_csv(res.trajectory));
  return 0;
}

struct EstimateArgs {
  std::string game;
  std::string traj;
  std::string out = "-";
  std::string format = "csv";
  double sv_threshold = 1e-8;
  bool no_warm_start = false;
  unsigned long long seed = 0;
};

int cmd_estimate_eps(const EstimateArgs& a) {
  const GameDefinition g = load_game(a.game);
  const Trajectory traj = load_trajectory(a.traj);
  RecoverOptions opt;
  opt.sv_threshold = a.sv_threshold;
  opt.warm_start = !a.no_warm_start;
  const EpsilonTrace trace = recover_epsilon(g, traj, opt);
  emit(a.out, a.format == "jsonl" ? epsilon_jsonl(trace) : epsilon_csv(trace));
  return 0;
}

struct InvariantsArgs {
  std::string game;
  std::string traj;
  std::string candidates;
  std::string out = "-";
  double invariance_tol = 1e-6;
  double closed_tol = 1e-6;
  int stability = 0;
  double delta = 1e-3;
  unsigned long long seed = 0;
  std::string format = "json";
};

int cmd_invariants(const InvariantsArgs& a) {
  const GameDefinition g = load_game(a.game);
  const Trajectory traj = load_trajectory(a.traj);
  const std::vector<QuantityCandidate> cands = load_candidates(a.candidates);
  OmenTolerances tol;
  tol.invariance_rel = a.invariance_tol;
  tol.closed_abs_scale = a.closed_tol;
  nlohmann::ordered_json out;
  out["omens"] = omen_report_json(scan_omens(cands, traj, tol));
  if (a.stability > 0)
    out["stability"] = stability_report_json(
        verdict_stability(g, cands, a.stability, a.delta, a.seed, tol));
  emit(a.out, out.dump(2) + "\n");
  return 0;
}

struct PredictArgs {
  std::string game;
  std::string out = "-";
  std::string predictor = "frozen";
  double dt = 0.0;
  double depth_cap = -1.0;  // default at 100 grid steps, set after load
  int observer = 1;
  int window = 200;
  double lambda = 1e-8;
  bool pair_predicted_state = false;
  bool correct_observer = false;
  unsigned long long seed = 0;
  std::string format = "json";
};

OracleConfig oracle_config(const PredictArgs& a, const GameDefinition& g) {
  OracleConfig cfg;
  cfg.observer = a.observer;
  cfg.predictor = parse_predictor(a.predictor);
  cfg.dt = a.dt;
  cfg.depth_cap =
      a.depth_cap > 0.0 ? a.depth_cap : 100.0 * g.horizon.step;
  cfg.window = a.window;
  cfg.lambda = a.lambda;
  cfg.pair_with_predicted_state = a.pair_predicted_state;
  cfg.correct_observer = a.correct_observer;
  if (cfg.dt > cfg.depth_cap)
    throw OracleError("DEPTH_CAP", "dt exceeds the depth cap");
  return cfg;
}

int cmd_predict(const PredictArgs& a) {
  const GameDefinition g = load_game(a.game);
  const OracleConfig cfg = oracle_config(a, g);
  const Trajectory traj = simulate(g).value();
  const PredictionRun run = run_prediction_loop(g, traj, cfg);

  if (a.out == "-") {
    emit(a.out, metrics_json(run).dump(2) + "\n");
  } else {
    atomic_write(a.out + ".predictions.jsonl", prediction_log_jsonl(run.log));
    atomic_write(a.out + ".metrics.json", metrics_json(run).dump(2) + "\n");
    std::printf("anchors %zu compared %d baseline %s corrected %s improved %s\n",
                run.anchors.size(), run.aggregate.compared_anchors,
                fmt17(run.aggregate.baseline_state_rmse).c_str(),
                fmt17(run.aggregate.corrected_state_rmse).c_str(),
                fmt17(run.aggregate.improved_fraction).c_str());
  }
  if (run.aggregate.compared_anchors == 0) {
    std::fprintf(stderr,
                 "no anchor had both a corrected forecast and a realized "
                 "window to compare against\n");
    return 4;
  }
  return 0;
}

int cmd_analyze(const PredictArgs& a) {
  const GameDefinition g = load_game(a.game);
  const OracleConfig cfg = oracle_config(a, g);
  const Prognosis prog = strategic_analysis(g, cfg);
  emit(a.out, prognosis_json(prog).dump(2) + "\n");
  return 0;
}

void add_predictor_options(CLI::App* cmd, PredictArgs& a) {
  cmd->add_option("game", a.game, "game definition JSON")->required();
  cmd->add_option("--predictor", a.predictor, "frozen, linear or replay");
  cmd->add_option("--dt", a.dt, "forecast depth (multiple of the grid step)")
      ->required();
  cmd->add_option("--depth-cap", a.depth_cap,
                  "admissible forecast depth (default: 100 grid steps)");
  cmd->add_option("--observer", a.observer, "observing player id");
  cmd->add_option("--window", a.window, "fit window W");
  cmd->add_option("--lambda", a.lambda, "ridge strength");
  cmd->add_flag("--pair-predicted-state", a.pair_predicted_state,
                "pair deviations with the predicted state instead of the "
                "realized one");
  cmd->add_flag("--correct-observer", a.correct_observer,
                "apply the correction to the observer as well");
  cmd->add_option("--out,-o", a.out, "output path, - for stdout");
  cmd->add_option("--seed", a.seed, "random seed");
  cmd->add_option("--format", a.format, "json")
      ->check(CLI::IsMember({"json"}));
}

bool insufficient_data(const std::string& code) {
  return code == "INSUFFICIENT_HISTORY" || code == "INSUFFICIENT_SAMPLES" ||
         code == "GAP_IN_LOG" || code == "WINDOW_NOT_COVERED";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"differential interactive games toolkit"};
  app.set_version_flag("--version", "igame 0.1.0");
  app.require_subcommand(1);

  SimulateArgs sim_args;
  CLI::App* sim = app.add_subcommand("simulate", "run a scenario");
  sim->add_option("game", sim_args.game, "game definition JSON")->required();
  sim->add_option("--out,-o", sim_args.out, "output path, - for stdout");
  sim->add_option("--seed", sim_args.seed, "random seed");
  sim->add_option("--format", sim_args.format, "csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}));

  EstimateArgs est_args;
  CLI::App* est =
      app.add_subcommand("estimate-eps", "recover eps from a trajectory");
  est->add_option("game", est_args.game, "game definition JSON")->required();
  est->add_option("traj", est_args.traj, "trajectory CSV")->required();
  est->add_option("--out,-o", est_args.out, "output path, - for stdout");
  est->add_option("--seed", est_args.seed, "random seed");
  est->add_option("--format", est_args.format, "csv or jsonl")
      ->check(CLI::IsMember({"csv", "jsonl"}));
  est->add_option("--sv-threshold", est_args.sv_threshold,
                  "identifiability threshold on the smallest singular value");
  est->add_flag("--no-warm-start", est_args.no_warm_start,
                "start each sample from zero instead of the last estimate");

  InvariantsArgs inv_args;
  CLI::App* inv =
      app.add_subcommand("invariants", "scan candidate quantities");
  inv->add_option("game", inv_args.game, "game definition JSON")->required();
  inv->add_option("traj", inv_args.traj, "trajectory CSV")->required();
  inv->add_option("candidates", inv_args.candidates, "candidates JSON")
      ->required();
  inv->add_option("--out,-o", inv_args.out, "output path, - for stdout");
  inv->add_option("--invariance-tol", inv_args.invariance_tol,
                  "relative variation below which a quantity is invariant");
  inv->add_option("--closed-tol", inv_args.closed_tol,
                  "residual scale for accepting closed dynamics");
  inv->add_option("--stability", inv_args.stability,
                  "perturbation trials for verdict stability");
  inv->add_option("--delta", inv_args.delta, "perturbation magnitude");
  inv->add_option("--seed", inv_args.seed, "perturbation seed");
  inv->add_option("--format", inv_args.format, "json")
      ->check(CLI::IsMember({"json"}));

  PredictArgs pred_args;
  CLI::App* pred =
      app.add_subcommand("predict", "run the forecast-correct loop");
  add_predictor_options(pred, pred_args);

  PredictArgs ana_args;
  CLI::App* ana = app.add_subcommand(
      "analyze", "long-term rollout overridden by corrected segments");
  add_predictor_options(ana, ana_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_args);
    if (est->parsed()) return cmd_estimate_eps(est_args);
    if (inv->parsed()) return cmd_invariants(inv_args);
    if (pred->parsed()) return cmd_predict(pred_args);
    if (ana->parsed()) return cmd_analyze(ana_args);
  } catch (const LoadError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const OracleError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return insufficient_data(e.code()) ? 4 : 2;
  } catch (const ModelError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const EpsilonError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const EngineError& e) {
    std::fprintf(stderr, "error: %s (%s)\n", e.what(), e.code().c_str());
    return 3;
  } catch (const EvalError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 2;
}
