#include "helpers.hpp"

#include <igame/epsilon.hpp>
#include <igame/io.hpp>

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

using namespace igame;
using Catch::Matchers::WithinAbs;
using igame::test::free_game;
using igame::test::games_dir;
using igame::test::lin1;
using igame::test::rem2_game;

namespace {

// One player, u = uo + eps*phi, scalar everything.
GameDefinition scalar_game() {
  GameDefinition g;
  g.name = "scalar";
  g.state_dim = 1;
  PlayerSpec p;
  p.id = 1;
  p.control_dim = 1;
  p.eps_dim = 1;
  p.feedback.form = FeedbackForm::direct;
  p.feedback.exprs = {parse("uo[1][0] + eps[1][0]*phi[0]")};
  g.players = {p};
  g.dynamics = {parse("u[1][0]")};
  g.horizon = {0.0, 1.0, 0.01};
  g.scenario.uo = {{parse("1.0")}};
  g.eps_truth = std::vector<std::vector<Expr>>{{parse("0.1")}};
  return g;
}

// Two control components share one eps slot, so the inversion is a
// least-squares fit: u = (uo0 + eps*phi0, uo1 + eps*t).
GameDefinition overdetermined_game() {
  GameDefinition g;
  g.name = "over";
  g.state_dim = 1;
  PlayerSpec p;
  p.id = 1;
  p.control_dim = 2;
  p.eps_dim = 1;
  p.feedback.form = FeedbackForm::direct;
  p.feedback.exprs = {parse("uo[1][0] + eps[1][0]*phi[0]"),
                      parse("uo[1][1] + eps[1][0]*t")};
  g.players = {p};
  g.dynamics = {parse("u[1][0]")};
  g.horizon = {0.0, 1.0, 0.01};
  g.scenario.uo = {{parse("1.0"), parse("2.0")}};
  g.eps_truth = std::vector<std::vector<Expr>>{{parse("0.25")}};
  return g;
}

Trajectory one_sample(double t, std::vector<double> phi, Values u, Values uo) {
  Trajectory traj;
  traj.game_name = "manual";
  traj.step = 0.01;
  traj.samples.push_back({t, std::move(phi), std::move(u), std::move(uo), {}});
  return traj;
}

}  // namespace

TEST_CASE("a linear-in-state law inverts in one sample") {
  const Trajectory traj = one_sample(0.0, {2.0}, {{1.2}}, {{1.0}});
  const EpsilonTrace trace = recover_epsilon(scalar_game(), traj);
  REQUIRE(trace.samples.size() == 1);
  const EpsilonSample& row = trace.samples[0];
  REQUIRE(row.player == 1);
  REQUIRE(row.flag == EpsFlag::identified);
  REQUIRE(row.eps.has_value());
  REQUIRE_THAT((*row.eps)[0], WithinAbs(0.1, 1e-9));
  REQUIRE(row.residual <= 1e-9);
}

TEST_CASE("a zero state carries no information about eps") {
  const Trajectory traj = one_sample(0.0, {0.0}, {{1.0}}, {{1.0}});
  const EpsilonTrace trace = recover_epsilon(scalar_game(), traj);
  REQUIRE(trace.samples.size() == 1);
  // The residual vanishes, but the sample is still flagged: eps has no
  // effect at phi = 0 and must not be reported as recovered.
  REQUIRE(trace.samples[0].flag == EpsFlag::unidentifiable);
  REQUIRE_FALSE(trace.samples[0].eps.has_value());
}

TEST_CASE("recovery round-trips the reference game") {
  const GameDefinition g = lin1();
  const Trajectory traj = simulate(g).value();
  const EpsilonTrace trace = recover_epsilon(g, traj);
  REQUIRE(trace.samples.size() == 2 * traj.samples.size());

  const double truth[2] = {0.2, 0.1};
  for (std::size_t r = 0; r < trace.samples.size(); ++r) {
    const EpsilonSample& row = trace.samples[r];
    const TrajectorySample& src = traj.samples[r / 2];
    REQUIRE(row.t == src.t);
    REQUIRE(row.player == static_cast<int>(r % 2) + 1);
    if (std::abs(src.phi[0]) < 1e-8) {
      REQUIRE(row.flag == EpsFlag::unidentifiable);
      REQUIRE_FALSE(row.eps.has_value());
    } else {
      REQUIRE(row.flag == EpsFlag::identified);
      REQUIRE(row.residual <= 1e-9);
      REQUIRE_THAT((*row.eps)[0], WithinAbs(truth[row.player - 1], 1e-6));
    }
  }
  // The initial state is zero, so exactly the two t=0 rows are flagged.
  REQUIRE(trace.samples[0].flag == EpsFlag::unidentifiable);
  REQUIRE(trace.samples[1].flag == EpsFlag::unidentifiable);
}

TEST_CASE("the flag escalates with the size of the inconsistency") {
  const GameDefinition g = overdetermined_game();
  // Consistent measurements: u = (1 + 0.25*3, 2 + 0.25*1).
  {
    const Trajectory traj = one_sample(1.0, {3.0}, {{1.75, 2.25}}, {{1.0, 2.0}});
    const EpsilonTrace trace = recover_epsilon(g, traj);
    REQUIRE(trace.samples[0].flag == EpsFlag::identified);
    REQUIRE_THAT((*trace.samples[0].eps)[0], WithinAbs(0.25, 1e-9));
  }
  // A 1e-7 measurement error leaves a small but nonzero least-squares
  // residual: recovered, flagged as inconsistent.
  {
    const Trajectory traj =
        one_sample(1.0, {3.0}, {{1.75 + 1e-7, 2.25}}, {{1.0, 2.0}});
    const EpsilonTrace trace = recover_epsilon(g, traj);
    REQUIRE(trace.samples[0].flag == EpsFlag::inconsistent);
    REQUIRE(trace.samples[0].eps.has_value());
    REQUIRE_THAT((*trace.samples[0].eps)[0], WithinAbs(0.25, 1e-6));
    REQUIRE(trace.samples[0].residual > 1e-9);
    REQUIRE(trace.samples[0].residual <= 1e-6);
  }
  // A gross error exceeds the acceptance residual; no eps is reported.
  {
    const Trajectory traj =
        one_sample(1.0, {3.0}, {{1.75 + 1e-2, 2.25}}, {{1.0, 2.0}});
    const EpsilonTrace trace = recover_epsilon(g, traj);
    REQUIRE(trace.samples[0].flag == EpsFlag::no_convergence);
    REQUIRE_FALSE(trace.samples[0].eps.has_value());
    REQUIRE(trace.samples[0].residual > 1e-6);
  }
}

TEST_CASE("warm starts do not change what is identified") {
  const GameDefinition g = lin1(2.0, 0.01);
  const Trajectory traj = simulate(g).value();
  RecoverOptions cold;
  cold.warm_start = false;
  const EpsilonTrace a = recover_epsilon(g, traj);
  const EpsilonTrace b = recover_epsilon(g, traj, cold);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t r = 0; r < a.samples.size(); ++r) {
    REQUIRE(a.samples[r].flag == b.samples[r].flag);
    // Both solves stop at the acceptance residual, so the estimates may
    // differ by up to twice that scale while naming the same parameter.
    if (a.samples[r].eps && b.samples[r].eps)
      REQUIRE_THAT((*a.samples[r].eps)[0],
                   WithinAbs((*b.samples[r].eps)[0], 2e-6));
  }
}

TEST_CASE("players without eps slots produce no rows") {
  const GameDefinition g = free_game();
  const Trajectory traj = simulate(g).value();
  REQUIRE(recover_epsilon(g, traj).samples.empty());
}

TEST_CASE("recovery requires a square or overdetermined direct law") {
  const Trajectory dummy = one_sample(0.0, {1.0}, {{1.0}}, {{1.0}});

  // Coalition games are out of scope.
  const GameDefinition coop = load_game(games_dir() + "/coop2.json");
  Trajectory ctraj;
  ctraj.coalitional = true;
  try {
    recover_epsilon(coop, ctraj);
    FAIL("expected an epsilon error");
  } catch (const EpsilonError& e) {
    REQUIRE(e.code() == "UNSUPPORTED");
  }

  // First-order laws must be reduced before recovery.
  try {
    recover_epsilon(rem2_game(), dummy);
    FAIL("expected an epsilon error");
  } catch (const EpsilonError& e) {
    REQUIRE(e.code() == "UNSUPPORTED");
    REQUIRE(std::string(e.what()).find("exclude_derivative") !=
            std::string::npos);
  }

  // More eps components than equations cannot be inverted.
  GameDefinition wide = scalar_game();
  wide.players[0].eps_dim = 2;
  try {
    recover_epsilon(wide, dummy);
    FAIL("expected an epsilon error");
  } catch (const EpsilonError& e) {
    REQUIRE(e.code() == "UNSUPPORTED");
  }

  // Inverse-form laws with eps slots are not invertible sample-wise.
  GameDefinition inv = scalar_game();
  inv.players[0].feedback.form = FeedbackForm::inverse;
  REQUIRE_THROWS_AS(recover_epsilon(inv, dummy), EpsilonError);
}

TEST_CASE("a trajectory without control columns is rejected") {
  const GameDefinition g = lin1();
  Trajectory traj;
  traj.step = 0.01;
  traj.samples.push_back({0.0, {1.0}, {{1.0}}, {{1.0}}, {}});
  try {
    recover_epsilon(g, traj);
    FAIL("expected an epsilon error");
  } catch (const EpsilonError& e) {
    REQUIRE(e.code() == "MISSING_COLUMNS");
  }
}

TEST_CASE("a law that cannot be evaluated marks the row, not the run") {
  GameDefinition g = scalar_game();
  g.players[0].feedback.exprs = {parse("uo[1][0] + eps[1][0]*log(phi[0])")};
  const Trajectory traj = one_sample(0.0, {-1.0}, {{1.0}}, {{1.0}});
  const EpsilonTrace trace = recover_epsilon(g, traj);
  REQUIRE(trace.samples.size() == 1);
  REQUIRE(trace.samples[0].flag == EpsFlag::no_convergence);
  REQUIRE(std::isinf(trace.samples[0].residual));
  REQUIRE_FALSE(trace.samples[0].eps.has_value());
}
