#pragma once

// In-code fixture games shared across the test binaries. Building them
// here keeps unit tests independent of file I/O; the shipped JSON copies
// under games/ are exercised separately by the io tests.

#include <igame/igame.hpp>

#include <cmath>
#include <string>
#include <vector>

namespace igame::test {

// Two players, scalar state, laws u_i = uo_i + eps_i * phi. The scenario
// (1, -0.5) with eps (0.2, 0.1) makes the exact flow dphi/dt = 0.5 + 0.3 phi.
inline GameDefinition lin1(double t1 = 10.0, double h = 0.01,
                           const std::string& eps1 = "0.2",
                           const std::string& eps2 = "0.1") {
  GameDefinition g;
  g.name = "lin1";
  g.state_dim = 1;
  for (int i = 1; i <= 2; ++i) {
    PlayerSpec p;
    p.id = i;
    p.control_dim = 1;
    p.eps_dim = 1;
    p.feedback.form = FeedbackForm::direct;
    p.feedback.max_derivative_order = 0;
    p.feedback.exprs.push_back(parse("uo[" + std::to_string(i) + "][0] + eps[" +
                                     std::to_string(i) + "][0]*phi[0]"));
    g.players.push_back(std::move(p));
  }
  g.dynamics.push_back(parse("u[1][0] + u[2][0]"));
  g.horizon = Horizon{0.0, t1, h};
  g.scenario.uo = {{parse("1.0")}, {parse("-0.5")}};
  g.eps_truth = std::vector<std::vector<Expr>>{{parse(eps1)}, {parse(eps2)}};
  return g;
}

// phi(t) of the lin1 flow from phi(0) = 0 with eps (0.2, 0.1).
inline double lin1_closed(double t) {
  return (0.5 / 0.3) * (std::exp(0.3 * t) - 1.0);
}

// One idle player, frozen dynamics, phi0 = 3: every quantity of phi alone
// is constant along the run.
inline GameDefinition free_game(double t1 = 1.0, double h = 0.01) {
  GameDefinition g;
  g.name = "free1";
  g.state_dim = 1;
  PlayerSpec p;
  p.id = 1;
  p.control_dim = 1;
  p.eps_dim = 0;
  p.feedback.form = FeedbackForm::direct;
  p.feedback.max_derivative_order = 0;
  p.feedback.exprs.push_back(parse("uo[1][0]"));
  g.players.push_back(std::move(p));
  g.dynamics.push_back(parse("0"));
  g.horizon = Horizon{0.0, t1, h};
  g.scenario.uo = {{parse("0.7")}};
  g.initial_state = {3.0};
  return g;
}

// Planar rotation without controls; explicit Euler grows the energy
// phi0^2 + phi1^2 by exactly (1 + h^2) per step.
inline GameDefinition harmonic_game(double t1 = 1.0, double h = 0.001) {
  GameDefinition g;
  g.name = "harmonic";
  g.state_dim = 2;
  PlayerSpec p;
  p.id = 1;
  p.control_dim = 1;
  p.eps_dim = 0;
  p.feedback.form = FeedbackForm::direct;
  p.feedback.max_derivative_order = 0;
  p.feedback.exprs.push_back(parse("uo[1][0]"));
  g.players.push_back(std::move(p));
  g.dynamics.push_back(parse("phi[1]"));
  g.dynamics.push_back(parse("-phi[0]"));
  g.horizon = Horizon{0.0, t1, h};
  g.scenario.uo = {{parse("0")}};
  g.initial_state = {1.0, 0.0};
  return g;
}

// First-order feedback u1 = uo1 + eps1 * dphi on dynamics u1 + u2; the
// derivative-free equivalent is u1 = (uo1 + eps1 u2) / (1 - eps1).
inline GameDefinition rem2_game(const std::string& eps1 = "0.5",
                                double t1 = 1.0, double h = 0.01) {
  GameDefinition g;
  g.name = "rem2";
  g.state_dim = 1;
  {
    PlayerSpec p;
    p.id = 1;
    p.control_dim = 1;
    p.eps_dim = 1;
    p.feedback.form = FeedbackForm::direct;
    p.feedback.max_derivative_order = 1;
    p.feedback.exprs.push_back(parse("uo[1][0] + eps[1][0]*dphi[0]"));
    g.players.push_back(std::move(p));
  }
  {
    PlayerSpec p;
    p.id = 2;
    p.control_dim = 1;
    p.eps_dim = 0;
    p.feedback.form = FeedbackForm::direct;
    p.feedback.max_derivative_order = 0;
    p.feedback.exprs.push_back(parse("uo[2][0]"));
    g.players.push_back(std::move(p));
  }
  g.dynamics.push_back(parse("u[1][0] + u[2][0]"));
  g.horizon = Horizon{0.0, t1, h};
  g.scenario.uo = {{parse("1.0")}, {parse("-0.5")}};
  g.eps_truth = std::vector<std::vector<Expr>>{{parse(eps1)}, {}};
  return g;
}

inline std::string games_dir() {
#ifdef IGAME_GAMES_DIR
  return IGAME_GAMES_DIR;
#else
  return "games";
#endif
}

}  // namespace igame::test
