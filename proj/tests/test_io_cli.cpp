#include "helpers.hpp"

#include <igame/igame.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

using namespace igame;
using Catch::Matchers::ContainsSubstring;
using Catch::Matchers::WithinAbs;
using igame::test::free_game;
using igame::test::games_dir;
using igame::test::lin1;

namespace {

namespace fs = std::filesystem;

const std::string& work_dir() {
  static const std::string dir = [] {
    std::string tmpl = "/tmp/igame_cli_XXXXXX";
    char* made = mkdtemp(tmpl.data());
    REQUIRE(made != nullptr);
    return std::string(made);
  }();
  return dir;
}

std::string path_in(const std::string& name) { return work_dir() + "/" + name; }

void write_text(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  REQUIRE(out.good());
  out << content;
}

std::string slurp(const std::string& path) { return read_file(path); }

std::string cli_bin() { return IGAME_BIN; }

int run_cli(const std::string& args, const std::string& stdout_to = "") {
  std::string cmd = cli_bin() + " " + args;
  if (!stdout_to.empty()) cmd += " > " + stdout_to;
  cmd += " 2> " + path_in("stderr.txt");
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

std::string game_file(const std::string& name) {
  return games_dir() + "/" + name;
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text)
    if (c == '\n') ++n;
  return n;
}

int count_occurrences(const std::string& text, const std::string& needle) {
  int n = 0;
  for (std::size_t at = text.find(needle); at != std::string::npos;
       at = text.find(needle, at + needle.size()))
    ++n;
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Serialization units

TEST_CASE("doubles survive the text round trip") {
  REQUIRE(fmt17(1.0) == "1");
  REQUIRE(fmt17(0.1) == "0.10000000000000001");
  for (double v : {0.3, -1e-7, 1.0 / 3.0, 123456.789, 2.2250738585072014e-308})
    REQUIRE(std::stod(fmt17(v)) == v);
}

TEST_CASE("trajectory CSV round-trips bitwise") {
  const Trajectory traj = simulate(lin1(1.0, 0.01)).value();
  const std::string csv = trajectory_csv(traj);
  REQUIRE(csv.rfind("t,phi_0,u_1_0,u_2_0,uo_1_0,uo_2_0,eps_1_0,eps_2_0\n",
                    0) == 0);

  const Trajectory back = trajectory_from_csv(csv);
  REQUIRE(back.samples.size() == traj.samples.size());
  REQUIRE(back.step == traj.step);
  REQUIRE(back.eps_recorded);
  REQUIRE_FALSE(back.coalitional);
  for (std::size_t k = 0; k < traj.samples.size(); ++k) {
    REQUIRE(back.samples[k].t == traj.samples[k].t);
    REQUIRE(back.samples[k].phi == traj.samples[k].phi);
    REQUIRE(back.samples[k].u == traj.samples[k].u);
    REQUIRE(back.samples[k].uo == traj.samples[k].uo);
    REQUIRE(back.samples[k].eps == traj.samples[k].eps);
  }
}

TEST_CASE("coalition columns use their own prefix") {
  const Trajectory traj =
      simulate(load_game(game_file("coop2.json"))).value();
  REQUIRE(traj.coalitional);
  const std::string csv = trajectory_csv(traj);
  REQUIRE_THAT(csv.substr(0, csv.find('\n')), ContainsSubstring("v_1_0"));
  REQUIRE(csv.find(",u_") == std::string::npos);

  const Trajectory back = trajectory_from_csv(csv);
  REQUIRE(back.coalitional);
  REQUIRE(back.samples.front().u == traj.samples.front().u);
}

TEST_CASE("an empty trajectory cannot be serialized") {
  REQUIRE_THROWS_AS(trajectory_csv(Trajectory{}), std::invalid_argument);
}

TEST_CASE("trajectory CSV parse errors carry the BAD_CSV code") {
  const std::vector<std::string> bad = {
      "",                                // empty file
      "x,phi_0\n0,1\n",                  // wrong leading column
      "t,phi_0\n",                       // no data rows
      "t,phi_0\n0,1,2\n",                // wrong cell count
      "t,phi_0\n0,banana\n",             // non-numeric cell
      "t,widget_0\n0,1\n",               // unknown column
      "t,u_x_0\n0,1\n",                  // malformed block suffix
  };
  for (const std::string& text : bad) {
    try {
      trajectory_from_csv(text);
      FAIL("expected a parse failure for: " + text);
    } catch (const LoadError& e) {
      REQUIRE(e.code() == "BAD_CSV");
    }
  }
}

TEST_CASE("row numbers appear in cell-level diagnostics") {
  try {
    trajectory_from_csv("t,phi_0\n0,1\n0.5,oops\n", "weird.csv");
    FAIL("expected a parse failure");
  } catch (const LoadError& e) {
    REQUIRE_THAT(e.what(), ContainsSubstring("weird.csv:row 2"));
    REQUIRE_THAT(e.what(), ContainsSubstring("oops"));
  }
}

TEST_CASE("trajectory JSONL leads with a meta line") {
  const Trajectory traj = simulate(free_game(0.02, 0.01)).value();
  const std::string jsonl = trajectory_jsonl(traj);
  REQUIRE(count_lines(jsonl) == 1 + static_cast<int>(traj.samples.size()));
  const auto meta =
      nlohmann::json::parse(jsonl.substr(0, jsonl.find('\n')));
  REQUIRE(meta["game"] == "free1");
  REQUIRE(meta["step"] == 0.01);
  REQUIRE(meta["coalitional"] == false);
  REQUIRE(meta["samples"] == 3);

  const std::size_t second = jsonl.find('\n') + 1;
  const auto row = nlohmann::json::parse(
      jsonl.substr(second, jsonl.find('\n', second) - second));
  REQUIRE(row["t"] == 0.0);
  REQUIRE(row["phi"][0] == 3.0);
  REQUIRE(row["u"][0][0] == 0.7);
}

TEST_CASE("epsilon CSV leaves absent estimates blank") {
  EpsilonTrace trace;
  EpsilonSample hit;
  hit.t = 0.5;
  hit.player = 1;
  hit.eps = std::vector<double>{0.25};
  hit.flag = EpsFlag::identified;
  hit.residual = 0.0;
  EpsilonSample miss;
  miss.t = 0.5;
  miss.player = 2;
  miss.flag = EpsFlag::unidentifiable;
  miss.residual = 0.0;
  trace.samples = {hit, miss};

  const std::string csv = epsilon_csv(trace);
  REQUIRE(csv ==
          "t,player,eps_0,flag,residual\n"
          "0.5,1,0.25,IDENTIFIED,0\n"
          "0.5,2,,UNIDENTIFIABLE,0\n");

  trace.samples = {miss};
  REQUIRE(epsilon_csv(trace).rfind("t,player,flag,residual\n", 0) == 0);
}

TEST_CASE("epsilon JSONL uses nulls for absent values") {
  EpsilonTrace trace;
  EpsilonSample bad;
  bad.t = 1.0;
  bad.player = 3;
  bad.flag = EpsFlag::no_convergence;
  bad.residual = std::numeric_limits<double>::infinity();
  trace.samples = {bad};

  const auto row = nlohmann::json::parse(
      epsilon_jsonl(trace).substr(0, epsilon_jsonl(trace).find('\n')));
  REQUIRE(row["t"] == 1.0);
  REQUIRE(row["player"] == 3);
  REQUIRE(row["eps"].is_null());
  REQUIRE(row["flag"] == "NO_CONVERGENCE");
  REQUIRE(row["residual"].is_null());
}

TEST_CASE("game serialization is a fixed point") {
  const GameDefinition g = lin1();
  const std::string text = serialize_game(g);
  REQUIRE(game_from_json(nlohmann::json::parse(text)) == g);

  const std::string path = path_in("lin1_copy.json");
  atomic_write(path, text);
  REQUIRE(load_game(path) == g);
  REQUIRE(serialize_game(load_game(path)) == text);
}

TEST_CASE("file-level load failures are classified") {
  try {
    load_game(path_in("does_not_exist.json"));
    FAIL("expected a load failure");
  } catch (const LoadError& e) {
    REQUIRE(e.code() == "IO");
    REQUIRE_THAT(e.what(), ContainsSubstring("does_not_exist.json"));
  }

  const std::string garbled = path_in("garbled.json");
  write_text(garbled, "{ nope");
  try {
    load_game(garbled);
    FAIL("expected a parse failure");
  } catch (const LoadError& e) {
    REQUIRE(e.code() == "BAD_JSON");
  }
}

TEST_CASE("candidate lists are validated on load") {
  const std::string not_array = path_in("cand_obj.json");
  write_text(not_array, "{\"name\": \"z\"}\n");
  try {
    load_candidates(not_array);
    FAIL("expected BAD_TYPE");
  } catch (const LoadError& e) {
    REQUIRE(e.code() == "BAD_TYPE");
  }

  const std::string no_expr = path_in("cand_missing.json");
  write_text(no_expr, "[{\"name\": \"z\"}]\n");
  try {
    load_candidates(no_expr);
    FAIL("expected MISSING_FIELD");
  } catch (const LoadError& e) {
    REQUIRE(e.code() == "MISSING_FIELD");
    REQUIRE_THAT(e.what(), ContainsSubstring("[0]"));
  }

  const std::string bad_expr = path_in("cand_expr.json");
  write_text(bad_expr, "[{\"name\": \"z\", \"expr\": \"1 +\"}]\n");
  try {
    load_candidates(bad_expr);
    FAIL("expected BAD_EXPRESSION");
  } catch (const LoadError& e) {
    REQUIRE(e.code() == "BAD_EXPRESSION");
    REQUIRE_THAT(e.what(), ContainsSubstring("offset"));
  }
}

TEST_CASE("atomic writes leave no droppings") {
  const std::string dir = path_in("atomic");
  fs::create_directory(dir);
  const std::string target = dir + "/out.txt";
  atomic_write(target, "first\n");
  atomic_write(target, "second\n");
  REQUIRE(slurp(target) == "second\n");
  int entries = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    (void)entry;
    ++entries;
  }
  REQUIRE(entries == 1);
}

TEST_CASE("prediction metrics serialize with per-anchor detail") {
  const GameDefinition g = lin1(1.0, 0.01);
  OracleConfig cfg;
  cfg.dt = 0.1;
  cfg.depth_cap = 10.0;
  cfg.window = 20;
  const PredictionRun run = run_prediction_loop(g, simulate(g).value(), cfg);
  const nlohmann::ordered_json j = metrics_json(run);

  REQUIRE(j["total_anchors"] == run.anchors.size());
  REQUIRE(j["evaluated_anchors"].get<int>() > 0);
  REQUIRE(j["baseline"]["anchors"] == run.aggregate.compared_anchors);
  REQUIRE(j["corrected"]["state_rmse"].get<double>() <
          j["baseline"]["state_rmse"].get<double>());
  REQUIRE(j["improved"] == run.aggregate.improved);
  REQUIRE(j["per_anchor"].size() == run.anchors.size());
  REQUIRE(j["per_anchor"][0]["corrected_state_rmse"].is_null());
  bool saw_improved_flag = false;
  for (const auto& row : j["per_anchor"])
    if (row["improved"].is_boolean()) saw_improved_flag = true;
  REQUIRE(saw_improved_flag);
}

// ---------------------------------------------------------------------------
// Command-line surface

TEST_CASE("cli: version") {
  REQUIRE(run_cli("--version", path_in("version.txt")) == 0);
  REQUIRE(slurp(path_in("version.txt")) == "igame 0.1.0\n");
}

TEST_CASE("cli: unknown flags are a usage error") {
  REQUIRE(run_cli("simulate " + game_file("lin1.json") + " --frobnicate") ==
          2);
  REQUIRE(run_cli("predict " + game_file("lin1.json")) == 2);  // missing --dt
  REQUIRE(run_cli("simulate " + game_file("lin1.json") +
                  " --format parquet") == 2);
}

TEST_CASE("cli: simulate writes the full grid") {
  const std::string out = path_in("lin1.csv");
  REQUIRE(run_cli("simulate " + game_file("lin1.json") + " --seed 7 -o " +
                  out) == 0);
  const Trajectory traj = load_trajectory(out);
  REQUIRE(traj.samples.size() == 1001);
  REQUIRE(traj.samples.back().t == 10.0);

  // The file is the in-process trajectory, exactly.
  const Trajectory direct = simulate(load_game(game_file("lin1.json"))).value();
  for (std::size_t k = 0; k < traj.samples.size(); ++k) {
    REQUIRE(traj.samples[k].phi == direct.samples[k].phi);
    REQUIRE(traj.samples[k].u == direct.samples[k].u);
  }
}

TEST_CASE("cli: simulate repeats byte for byte") {
  const std::string a = path_in("det_a.csv"), b = path_in("det_b.csv");
  REQUIRE(run_cli("simulate " + game_file("lin1.json") + " --seed 7 -o " + a) ==
          0);
  REQUIRE(run_cli("simulate " + game_file("lin1.json") + " --seed 7 -o " + b) ==
          0);
  REQUIRE(slurp(a) == slurp(b));

  const std::string ja = path_in("det_a.jsonl"), jb = path_in("det_b.jsonl");
  REQUIRE(run_cli("simulate " + game_file("lin1.json") +
                  " --seed 7 --format jsonl -o " + ja) == 0);
  REQUIRE(run_cli("simulate " + game_file("lin1.json") +
                  " --seed 7 --format jsonl -o " + jb) == 0);
  REQUIRE(slurp(ja) == slurp(jb));
  REQUIRE(count_lines(slurp(ja)) == 1002);
}

TEST_CASE("cli: malformed input is a usage error") {
  const std::string bad = path_in("broken.json");
  write_text(bad, "{ \"name\": ");
  REQUIRE(run_cli("simulate " + bad) == 2);
  REQUIRE(run_cli("simulate " + path_in("missing.json")) == 2);
}

TEST_CASE("cli: numeric blowups keep the partial trajectory") {
  GameDefinition g = free_game();
  g.name = "blowup";
  g.dynamics = {parse("phi[0]^2")};
  g.initial_state = {2.0};
  g.horizon = {0.0, 20.0, 1.0};
  const std::string game_path = path_in("blowup.json");
  write_text(game_path, serialize_game(g));

  const std::string out = path_in("blowup.csv");
  REQUIRE(run_cli("simulate " + game_path + " -o " + out) == 3);
  REQUIRE_FALSE(fs::exists(out));
  REQUIRE(fs::exists(out + ".partial"));
  const Trajectory part = load_trajectory(out + ".partial");
  REQUIRE(part.samples.size() >= 5);
  REQUIRE(part.samples.size() <= 15);
  const std::string err = slurp(path_in("stderr.txt"));
  REQUIRE_THAT(err, ContainsSubstring("NON_FINITE_STATE"));
}

TEST_CASE("cli: estimate-eps recovers the shipped truth") {
  const std::string traj_path = path_in("lin1_for_eps.csv");
  REQUIRE(run_cli("simulate " + game_file("lin1.json") + " -o " + traj_path) ==
          0);
  const std::string out = path_in("eps.csv");
  REQUIRE(run_cli("estimate-eps " + game_file("lin1.json") + " " + traj_path +
                  " --seed 7 -o " + out) == 0);
  const std::string csv = slurp(out);
  REQUIRE(csv.rfind("t,player,eps_0,flag,residual\n", 0) == 0);
  REQUIRE(count_lines(csv) == 2003);
  REQUIRE(count_occurrences(csv, ",IDENTIFIED,") == 2000);
  REQUIRE(count_occurrences(csv, ",UNIDENTIFIABLE,") == 2);

  const std::string again = path_in("eps_again.csv");
  REQUIRE(run_cli("estimate-eps " + game_file("lin1.json") + " " + traj_path +
                  " --seed 7 -o " + again) == 0);
  REQUIRE(slurp(again) == csv);

  const std::string jsonl = path_in("eps.jsonl");
  REQUIRE(run_cli("estimate-eps " + game_file("lin1.json") + " " + traj_path +
                  " --format jsonl -o " + jsonl) == 0);
  const std::string first_line =
      slurp(jsonl).substr(0, slurp(jsonl).find('\n'));
  const auto row = nlohmann::json::parse(first_line);
  REQUIRE(row.contains("flag"));
}

TEST_CASE("cli: estimate-eps refuses what it cannot attribute") {
  const std::string coop_traj = path_in("coop2.csv");
  REQUIRE(run_cli("simulate " + game_file("coop2.json") + " -o " + coop_traj) ==
          0);
  REQUIRE(run_cli("estimate-eps " + game_file("coop2.json") + " " + coop_traj) ==
          2);

  const std::string rem_traj = path_in("rem2.csv");
  REQUIRE(run_cli("simulate " + game_file("rem2_k1.json") + " -o " + rem_traj) ==
          0);
  REQUIRE(run_cli("estimate-eps " + game_file("rem2_k1.json") + " " +
                  rem_traj) == 2);
  REQUIRE_THAT(slurp(path_in("stderr.txt")),
               ContainsSubstring("exclude_derivative"));
}

TEST_CASE("cli: invariants classifies the shipped candidates") {
  const std::string traj_path = path_in("lin1_for_omen.csv");
  REQUIRE(run_cli("simulate " + game_file("lin1.json") + " -o " + traj_path) ==
          0);
  const std::string out = path_in("omens.json");
  REQUIRE(run_cli("invariants " + game_file("lin1.json") + " " + traj_path +
                  " " + game_file("candidates_lin1.json") +
                  " --stability 4 --seed 7 -o " + out) == 0);
  const auto j = nlohmann::json::parse(slurp(out));
  REQUIRE(j["omens"]["entries"].size() == 2);
  REQUIRE(j["omens"]["entries"][0]["name"] == "state");
  REQUIRE(j["omens"]["entries"][0]["verdict"] == "CLOSED_DYNAMICS");
  REQUIRE_THAT(j["omens"]["entries"][0]["c0"].get<double>(),
               WithinAbs(0.5, 1e-7));
  REQUIRE_THAT(j["omens"]["entries"][0]["c1"].get<double>(),
               WithinAbs(0.3, 1e-7));
  REQUIRE(j["omens"]["entries"][1]["verdict"] == "NEITHER");
  REQUIRE(j["stability"]["entries"][0]["flips"] == 0);
  REQUIRE(j["stability"]["entries"][0]["trials"] == 4);

  const std::string again = path_in("omens_again.json");
  REQUIRE(run_cli("invariants " + game_file("lin1.json") + " " + traj_path +
                  " " + game_file("candidates_lin1.json") +
                  " --stability 4 --seed 7 -o " + again) == 0);
  REQUIRE(slurp(again) == slurp(out));
}

TEST_CASE("cli: predict beats the frozen baseline on the shipped game") {
  const std::string prefix = path_in("run1");
  REQUIRE(run_cli("predict " + game_file("lin1.json") +
                  " --predictor frozen --dt 0.5 --window 200 --seed 7 -o " +
                  prefix,
                  path_in("predict_stdout.txt")) == 0);
  REQUIRE(fs::exists(prefix + ".predictions.jsonl"));
  const auto j = nlohmann::json::parse(slurp(prefix + ".metrics.json"));
  REQUIRE(j["total_anchors"] == 1001);
  REQUIRE(j["improved"].get<int>() == j["baseline"]["anchors"].get<int>());
  REQUIRE(j["corrected"]["state_rmse"].get<double>() <
          j["baseline"]["state_rmse"].get<double>());
  REQUIRE(j["improved_fraction"].get<double>() >= 0.95);
  REQUIRE_THAT(slurp(path_in("predict_stdout.txt")),
               ContainsSubstring("anchors 1001"));

  const std::string prefix2 = path_in("run2");
  REQUIRE(run_cli("predict " + game_file("lin1.json") +
                  " --predictor frozen --dt 0.5 --window 200 --seed 7 -o " +
                  prefix2) == 0);
  REQUIRE(slurp(prefix2 + ".metrics.json") == slurp(prefix + ".metrics.json"));
  REQUIRE(slurp(prefix2 + ".predictions.jsonl") ==
          slurp(prefix + ".predictions.jsonl"));
}

TEST_CASE("cli: predict accepts the other predictors") {
  REQUIRE(run_cli("predict " + game_file("lin1.json") +
                      " --predictor linear --dt 0.5 --seed 7",
                  path_in("linear_metrics.json")) == 0);

  // Replay of a game whose laws ignore the state is a fixed point: the
  // correction has nothing to learn and must not invent anything.
  GameDefinition quiet = lin1(10.0, 0.01, "0", "0");
  quiet.name = "lin1_quiet";
  const std::string quiet_path = path_in("lin1_quiet.json");
  write_text(quiet_path, serialize_game(quiet));
  REQUIRE(run_cli("predict " + quiet_path +
                      " --predictor replay --dt 0.5 --window 200 --seed 7",
                  path_in("replay_metrics.json")) == 0);
  const auto j = nlohmann::json::parse(slurp(path_in("replay_metrics.json")));
  REQUIRE(j["baseline"]["state_rmse"].get<double>() <= 1e-9);
  REQUIRE(j["corrected"]["state_rmse"].get<double>() <= 1e-6);
  REQUIRE(j["improved"].get<int>() == 0);
}

TEST_CASE("cli: predict configuration errors") {
  REQUIRE(run_cli("predict " + game_file("lin1.json") + " --dt 2.0") == 2);
  REQUIRE(run_cli("predict " + game_file("lin1.json") + " --dt 0.015") == 2);
  REQUIRE(run_cli("predict " + game_file("lin1.json") +
                  " --dt 0.5 --observer 9") == 2);
  REQUIRE(run_cli("predict " + game_file("coop2.json") + " --dt 0.1") == 2);
}

TEST_CASE("cli: predict reports when nothing was comparable") {
  GameDefinition shortened = lin1(1.0, 0.01);
  shortened.name = "lin1_short";
  const std::string short_path = path_in("lin1_short.json");
  write_text(short_path, serialize_game(shortened));
  REQUIRE(run_cli("predict " + short_path + " --dt 0.9 --window 200",
                  path_in("short_metrics.json")) == 4);
}

TEST_CASE("cli: analyze emits the stitched prognosis") {
  const std::string out = path_in("prognosis.json");
  REQUIRE(run_cli("analyze " + game_file("lin1.json") +
                  " --dt 0.5 --window 200 --seed 7 -o " + out) == 0);
  const auto j = nlohmann::json::parse(slurp(out));
  REQUIRE(j["game"] == "lin1");
  REQUIRE(j["rule"] == "corrected-segment-overrides-window");
  REQUIRE(j["grid"]["step"] == 0.01);
  REQUIRE(j["combined_state"].size() == 1001);
  REQUIRE(j["long_term_state"].size() == 1001);
  REQUIRE(j["realized_state"].size() == 1001);
  REQUIRE(j["anchors"].size() == 1001);
  REQUIRE(j["segments"].size() > 0);

  const std::string again = path_in("prognosis_again.json");
  REQUIRE(run_cli("analyze " + game_file("lin1.json") +
                  " --dt 0.5 --window 200 --seed 7 -o " + again) == 0);
  REQUIRE(slurp(again) == slurp(out));
}
