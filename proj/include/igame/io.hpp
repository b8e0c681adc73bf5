#pragma once

// File formats: game definitions as JSON, trajectories as CSV (the
// interchange format, readable back) or JSONL (export only), epsilon
// traces as CSV/JSONL, omen and prediction reports as JSON. All numeric
// text is round-trip exact, and all writers are deterministic: the same
// inputs produce the same bytes.

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <utility>
#include <vector>

#include "engine.hpp"
#include "epsilon.hpp"
#include "expr.hpp"
#include "invariants.hpp"
#include "model.hpp"
#include "oracle.hpp"

namespace igame {

class LoadError : public std::runtime_error {
 public:
  LoadError(std::string code, std::string where, const std::string& message)
      : std::runtime_error(where.empty() ? message : where + ": " + message),
        code_(std::move(code)),
        where_(std::move(where)) {}

  const std::string& code() const { return code_; }
  const std::string& where() const { return where_; }

 private:
  std::string code_;
  std::string where_;
};

// 17 significant digits: enough to reproduce any double exactly.
inline std::string fmt17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("IO", path, "cannot open for reading");
  std::ostringstream ss;
  ss << f.rdbuf();
  if (f.bad()) throw LoadError("IO", path, "read failed");
  return ss.str();
}

// Writes via a sibling temp file plus rename, so readers never observe a
// half-written file.
inline void atomic_write(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw LoadError("IO", tmp, "cannot open for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw LoadError("IO", tmp, "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw LoadError("IO", path, "rename failed: " + ec.message());
}

// ---------------------------------------------------------------------------
// Game definitions <-> JSON

namespace detail {

inline const nlohmann::json& require_field(const nlohmann::json& j,
                                           const char* key,
                                           const std::string& path) {
  if (!j.is_object())
    throw LoadError("BAD_TYPE", path, "expected an object");
  const auto it = j.find(key);
  if (it == j.end())
    throw LoadError("MISSING_FIELD", path + "." + key, "required field");
  return *it;
}

inline int json_int(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number_integer())
    throw LoadError("BAD_TYPE", path, "expected an integer");
  return j.get<int>();
}

inline double json_num(const nlohmann::json& j, const std::string& path) {
  if (!j.is_number())
    throw LoadError("BAD_TYPE", path, "expected a number");
  return j.get<double>();
}

inline std::string json_str(const nlohmann::json& j, const std::string& path) {
  if (!j.is_string())
    throw LoadError("BAD_TYPE", path, "expected a string");
  return j.get<std::string>();
}

inline Expr json_expr(const nlohmann::json& j, const std::string& path) {
  const std::string text = json_str(j, path);
  try {
    return parse(text);
  } catch (const ParseError& e) {
    throw LoadError("BAD_EXPRESSION", path,
                    std::string(e.what()) + " at offset " +
                        std::to_string(e.offset()) + " in \"" + text + "\"");
  }
}

inline std::vector<Expr> json_expr_list(const nlohmann::json& j,
                                        const std::string& path) {
  if (!j.is_array())
    throw LoadError("BAD_TYPE", path, "expected an array of expressions");
  std::vector<Expr> out;
  out.reserve(j.size());
  for (std::size_t k = 0; k < j.size(); ++k)
    out.push_back(json_expr(j[k], path + "[" + std::to_string(k) + "]"));
  return out;
}

inline FeedbackForm parse_form(const std::string& text,
                               const std::string& path) {
  if (text == "direct") return FeedbackForm::direct;
  if (text == "inverse") return FeedbackForm::inverse;
  if (text == "implicit") return FeedbackForm::implicit;
  throw LoadError("BAD_VALUE", path,
                  "feedback form must be direct, inverse or implicit");
}

}  // namespace detail

// Parses and validates; any validation diagnostic is an error here.
inline GameDefinition game_from_json(const nlohmann::json& j) {
  using detail::require_field;
  GameDefinition g;
  g.name = detail::json_str(require_field(j, "name", "game"), "game.name");
  g.state_dim =
      detail::json_int(require_field(j, "state_dim", "game"), "game.state_dim");

  const nlohmann::json& players = require_field(j, "players", "game");
  if (!players.is_array())
    throw LoadError("BAD_TYPE", "game.players", "expected an array");
  for (std::size_t k = 0; k < players.size(); ++k) {
    const std::string path = "game.players[" + std::to_string(k) + "]";
    const nlohmann::json& pj = players[k];
    PlayerSpec p;
    p.id = detail::json_int(require_field(pj, "id", path), path + ".id");
    p.control_dim = detail::json_int(require_field(pj, "control_dim", path),
                                     path + ".control_dim");
    if (pj.contains("eps_dim"))
      p.eps_dim = detail::json_int(pj.at("eps_dim"), path + ".eps_dim");
    const nlohmann::json& fj = require_field(pj, "feedback", path);
    const std::string fpath = path + ".feedback";
    p.feedback.form = detail::parse_form(
        detail::json_str(require_field(fj, "form", fpath), fpath + ".form"),
        fpath + ".form");
    if (fj.contains("order"))
      p.feedback.max_derivative_order =
          detail::json_int(fj.at("order"), fpath + ".order");
    p.feedback.exprs =
        detail::json_expr_list(require_field(fj, "exprs", fpath),
                               fpath + ".exprs");
    g.players.push_back(std::move(p));
  }

  g.dynamics = detail::json_expr_list(require_field(j, "dynamics", "game"),
                                      "game.dynamics");

  if (j.contains("coalitions")) {
    const nlohmann::json& cs = j.at("coalitions");
    if (!cs.is_array())
      throw LoadError("BAD_TYPE", "game.coalitions", "expected an array");
    for (std::size_t k = 0; k < cs.size(); ++k) {
      const std::string path = "game.coalitions[" + std::to_string(k) + "]";
      const nlohmann::json& cj = cs[k];
      CoalitionSpec c;
      c.id = detail::json_int(require_field(cj, "id", path), path + ".id");
      const nlohmann::json& mj = require_field(cj, "members", path);
      if (!mj.is_array())
        throw LoadError("BAD_TYPE", path + ".members", "expected an array");
      for (std::size_t m = 0; m < mj.size(); ++m)
        c.members.push_back(detail::json_int(
            mj[m], path + ".members[" + std::to_string(m) + "]"));
      c.control_dim = detail::json_int(require_field(cj, "control_dim", path),
                                       path + ".control_dim");
      c.exprs = detail::json_expr_list(require_field(cj, "exprs", path),
                                       path + ".exprs");
      g.coalitions.push_back(std::move(c));
    }
  }

  const nlohmann::json& hj = require_field(j, "horizon", "game");
  g.horizon.t0 =
      detail::json_num(require_field(hj, "t0", "game.horizon"), "game.horizon.t0");
  g.horizon.t1 =
      detail::json_num(require_field(hj, "t1", "game.horizon"), "game.horizon.t1");
  g.horizon.step = detail::json_num(require_field(hj, "step", "game.horizon"),
                                    "game.horizon.step");

  const nlohmann::json& sj = require_field(j, "scenario", "game");
  const nlohmann::json& uoj = require_field(sj, "uo", "game.scenario");
  if (!uoj.is_array())
    throw LoadError("BAD_TYPE", "game.scenario.uo", "expected an array");
  for (std::size_t k = 0; k < uoj.size(); ++k)
    g.scenario.uo.push_back(detail::json_expr_list(
        uoj[k], "game.scenario.uo[" + std::to_string(k) + "]"));

  if (j.contains("eps_truth")) {
    const nlohmann::json& ej = j.at("eps_truth");
    if (!ej.is_array())
      throw LoadError("BAD_TYPE", "game.eps_truth", "expected an array");
    std::vector<std::vector<Expr>> truth;
    for (std::size_t k = 0; k < ej.size(); ++k)
      truth.push_back(detail::json_expr_list(
          ej[k], "game.eps_truth[" + std::to_string(k) + "]"));
    g.eps_truth = std::move(truth);
  }

  if (j.contains("initial_state")) {
    const nlohmann::json& ij = j.at("initial_state");
    if (!ij.is_array())
      throw LoadError("BAD_TYPE", "game.initial_state", "expected an array");
    for (std::size_t k = 0; k < ij.size(); ++k)
      g.initial_state.push_back(detail::json_num(
          ij[k], "game.initial_state[" + std::to_string(k) + "]"));
  }

  const std::vector<Diagnostic> diags = validate(g);
  if (!diags.empty()) {
    std::string msg;
    for (const Diagnostic& d : diags) {
      if (!msg.empty()) msg += "; ";
      msg += d.code + " at " + d.path + ": " + d.message;
    }
    throw LoadError("VALIDATION", "game", msg);
  }
  return g;
}

inline nlohmann::ordered_json game_to_json(const GameDefinition& g) {
  nlohmann::ordered_json out;
  out["name"] = g.name;
  out["state_dim"] = g.state_dim;
  out["players"] = nlohmann::ordered_json::array();
  for (const PlayerSpec& p : g.players) {
    nlohmann::ordered_json pj;
    pj["id"] = p.id;
    pj["control_dim"] = p.control_dim;
    pj["eps_dim"] = p.eps_dim;
    pj["feedback"]["form"] = to_string(p.feedback.form);
    pj["feedback"]["order"] = p.feedback.max_derivative_order;
    pj["feedback"]["exprs"] = nlohmann::ordered_json::array();
    for (const Expr& e : p.feedback.exprs)
      pj["feedback"]["exprs"].push_back(to_string(e));
    out["players"].push_back(std::move(pj));
  }
  out["dynamics"] = nlohmann::ordered_json::array();
  for (const Expr& e : g.dynamics) out["dynamics"].push_back(to_string(e));
  if (!g.coalitions.empty()) {
    out["coalitions"] = nlohmann::ordered_json::array();
    for (const CoalitionSpec& c : g.coalitions) {
      nlohmann::ordered_json cj;
      cj["id"] = c.id;
      cj["members"] = c.members;
      cj["control_dim"] = c.control_dim;
      cj["exprs"] = nlohmann::ordered_json::array();
      for (const Expr& e : c.exprs) cj["exprs"].push_back(to_string(e));
      out["coalitions"].push_back(std::move(cj));
    }
  }
  out["horizon"]["t0"] = g.horizon.t0;
  out["horizon"]["t1"] = g.horizon.t1;
  out["horizon"]["step"] = g.horizon.step;
  out["scenario"]["uo"] = nlohmann::ordered_json::array();
  for (const auto& list : g.scenario.uo) {
    nlohmann::ordered_json lj = nlohmann::ordered_json::array();
    for (const Expr& e : list) lj.push_back(to_string(e));
    out["scenario"]["uo"].push_back(std::move(lj));
  }
  if (g.eps_truth) {
    out["eps_truth"] = nlohmann::ordered_json::array();
    for (const auto& list : *g.eps_truth) {
      nlohmann::ordered_json lj = nlohmann::ordered_json::array();
      for (const Expr& e : list) lj.push_back(to_string(e));
      out["eps_truth"].push_back(std::move(lj));
    }
  }
  if (!g.initial_state.empty()) out["initial_state"] = g.initial_state;
  return out;
}

inline std::string serialize_game(const GameDefinition& g) {
  return game_to_json(g).dump(2) + "\n";
}

inline GameDefinition load_game(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("BAD_JSON", path, e.what());
  }
  return game_from_json(j);
}

// ---------------------------------------------------------------------------
// Trajectories <-> CSV, -> JSONL

// Columns: t, phi_<j>, then per id the control block (u_<i>_<c> for plain
// games, v_<i>_<c> for coalition games), uo_<i>_<c>, and eps_<i>_<c> for
// players whose eps block is non-empty.
inline std::string trajectory_csv(const Trajectory& traj) {
  if (traj.samples.empty())
    throw std::invalid_argument("cannot serialize an empty trajectory");
  const TrajectorySample& first = traj.samples.front();

  std::string out = "t";
  for (std::size_t j = 0; j < first.phi.size(); ++j)
    out += ",phi_" + std::to_string(j);
  const char* u_prefix = traj.coalitional ? ",v_" : ",u_";
  for (std::size_t i = 0; i < first.u.size(); ++i)
    for (std::size_t c = 0; c < first.u[i].size(); ++c)
      out += u_prefix + std::to_string(i + 1) + "_" + std::to_string(c);
  for (std::size_t i = 0; i < first.uo.size(); ++i)
    for (std::size_t c = 0; c < first.uo[i].size(); ++c)
      out += ",uo_" + std::to_string(i + 1) + "_" + std::to_string(c);
  if (traj.eps_recorded)
    for (std::size_t i = 0; i < first.eps.size(); ++i)
      for (std::size_t c = 0; c < first.eps[i].size(); ++c)
        out += ",eps_" + std::to_string(i + 1) + "_" + std::to_string(c);
  out += "\n";

  for (const TrajectorySample& s : traj.samples) {
    out += fmt17(s.t);
    for (double v : s.phi) out += "," + fmt17(v);
    for (const auto& block : s.u)
      for (double v : block) out += "," + fmt17(v);
    for (const auto& block : s.uo)
      for (double v : block) out += "," + fmt17(v);
    if (traj.eps_recorded)
      for (const auto& block : s.eps)
        for (double v : block) out += "," + fmt17(v);
    out += "\n";
  }
  return out;
}

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r'))
    --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      out.push_back(trim(line.substr(start)));
      break;
    }
    out.push_back(trim(line.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}

// "u_3_1" -> {3, 1}; throws on anything else.
inline std::pair<int, int> parse_block_suffix(const std::string& token,
                                              std::size_t prefix_len,
                                              const std::string& where) {
  const std::string rest = token.substr(prefix_len);
  const std::size_t underscore = rest.find('_');
  if (underscore == std::string::npos)
    throw LoadError("BAD_CSV", where, "malformed column '" + token + "'");
  try {
    const int id = std::stoi(rest.substr(0, underscore));
    const int comp = std::stoi(rest.substr(underscore + 1));
    if (id < 1 || comp < 0) throw std::invalid_argument("range");
    return {id, comp};
  } catch (const std::exception&) {
    throw LoadError("BAD_CSV", where, "malformed column '" + token + "'");
  }
}

inline double parse_cell(const std::string& cell, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(cell, &used);
    if (used != cell.size()) throw std::invalid_argument("trailing text");
    return v;
  } catch (const std::exception&) {
    throw LoadError("BAD_CSV", where, "non-numeric cell '" + cell + "'");
  }
}

}  // namespace detail

// Reads the format trajectory_csv() writes. The game name is not part of
// the file; step is recovered from the first two samples (0 for a single
// sample), and eps_recorded reflects whether any eps column is present.
inline Trajectory trajectory_from_csv(const std::string& text,
                                      const std::string& where = "csv") {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (end > start) lines.push_back(text.substr(start, end - start));
    start = end + 1;
  }
  if (lines.empty()) throw LoadError("BAD_CSV", where, "empty file");

  const std::vector<std::string> header = detail::split_csv_line(lines[0]);
  if (header.empty() || header[0] != "t")
    throw LoadError("BAD_CSV", where, "first column must be t");

  enum class Block { time, phi, u, uo, eps };
  struct Column {
    Block block;
    int id = 0;    // 1-based for u/uo/eps
    int comp = 0;  // phi component or block component
  };
  std::vector<Column> cols;
  cols.push_back({Block::time, 0, 0});
  bool coalitional = false;
  bool has_eps = false;
  int state_dim = 0, max_id = 0;

  for (std::size_t k = 1; k < header.size(); ++k) {
    const std::string& tok = header[k];
    Column col;
    if (tok.rfind("phi_", 0) == 0) {
      col.block = Block::phi;
      try {
        col.comp = std::stoi(tok.substr(4));
      } catch (const std::exception&) {
        throw LoadError("BAD_CSV", where, "malformed column '" + tok + "'");
      }
      state_dim = std::max(state_dim, col.comp + 1);
    } else if (tok.rfind("uo_", 0) == 0) {
      col.block = Block::uo;
      std::tie(col.id, col.comp) = detail::parse_block_suffix(tok, 3, where);
    } else if (tok.rfind("eps_", 0) == 0) {
      col.block = Block::eps;
      std::tie(col.id, col.comp) = detail::parse_block_suffix(tok, 4, where);
      has_eps = true;
    } else if (tok.rfind("u_", 0) == 0 || tok.rfind("v_", 0) == 0) {
      col.block = Block::u;
      if (tok[0] == 'v') coalitional = true;
      std::tie(col.id, col.comp) = detail::parse_block_suffix(tok, 2, where);
    } else {
      throw LoadError("BAD_CSV", where, "unknown column '" + tok + "'");
    }
    if (col.block == Block::uo || col.block == Block::eps)
      max_id = std::max(max_id, col.id);
    cols.push_back(col);
  }

  int max_u_id = 0;
  std::vector<int> u_dims, uo_dims, eps_dims;
  for (const Column& c : cols) {
    auto grow = [](std::vector<int>& dims, int id, int comp) {
      if (static_cast<int>(dims.size()) < id) dims.resize(id, 0);
      dims[id - 1] = std::max(dims[id - 1], comp + 1);
    };
    if (c.block == Block::u) {
      grow(u_dims, c.id, c.comp);
      max_u_id = std::max(max_u_id, c.id);
    } else if (c.block == Block::uo) {
      grow(uo_dims, c.id, c.comp);
    } else if (c.block == Block::eps) {
      grow(eps_dims, c.id, c.comp);
    }
  }
  const int n_players = std::max(max_id, static_cast<int>(uo_dims.size()));
  uo_dims.resize(n_players, 0);
  eps_dims.resize(std::max(n_players, static_cast<int>(eps_dims.size())), 0);
  if (!coalitional) {
    u_dims.resize(std::max(n_players, max_u_id), 0);
  }

  Trajectory traj;
  traj.coalitional = coalitional;
  traj.eps_recorded = has_eps;

  for (std::size_t r = 1; r < lines.size(); ++r) {
    const std::vector<std::string> cells = detail::split_csv_line(lines[r]);
    const std::string row_where = where + ":row " + std::to_string(r);
    if (cells.size() != cols.size())
      throw LoadError("BAD_CSV", row_where, "wrong cell count");
    TrajectorySample s;
    s.phi.resize(static_cast<std::size_t>(state_dim), 0.0);
    auto sized = [](const std::vector<int>& dims) {
      Values v(dims.size());
      for (std::size_t i = 0; i < dims.size(); ++i)
        v[i].resize(static_cast<std::size_t>(dims[i]), 0.0);
      return v;
    };
    s.u = sized(u_dims);
    s.uo = sized(uo_dims);
    s.eps = sized(eps_dims);
    for (std::size_t k = 0; k < cells.size(); ++k) {
      const double v = detail::parse_cell(cells[k], row_where);
      const Column& c = cols[k];
      switch (c.block) {
        case Block::time: s.t = v; break;
        case Block::phi: s.phi[static_cast<std::size_t>(c.comp)] = v; break;
        case Block::u:
          s.u[static_cast<std::size_t>(c.id - 1)][
              static_cast<std::size_t>(c.comp)] = v;
          break;
        case Block::uo:
          s.uo[static_cast<std::size_t>(c.id - 1)][
              static_cast<std::size_t>(c.comp)] = v;
          break;
        case Block::eps:
          s.eps[static_cast<std::size_t>(c.id - 1)][
              static_cast<std::size_t>(c.comp)] = v;
          break;
      }
    }
    traj.samples.push_back(std::move(s));
  }
  if (traj.samples.empty())
    throw LoadError("BAD_CSV", where, "no data rows");
  if (traj.samples.size() >= 2)
    traj.step = traj.samples[1].t - traj.samples[0].t;
  return traj;
}

inline Trajectory load_trajectory(const std::string& path) {
  return trajectory_from_csv(read_file(path), path);
}

// One meta line, then one line per sample.
inline std::string trajectory_jsonl(const Trajectory& traj) {
  nlohmann::ordered_json meta;
  meta["game"] = traj.game_name;
  meta["step"] = traj.step;
  meta["coalitional"] = traj.coalitional;
  meta["samples"] = traj.samples.size();
  std::string out = meta.dump() + "\n";
  for (const TrajectorySample& s : traj.samples) {
    nlohmann::ordered_json line;
    line["t"] = s.t;
    line["phi"] = s.phi;
    line["u"] = s.u;
    line["uo"] = s.uo;
    if (traj.eps_recorded) line["eps"] = s.eps;
    out += line.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Epsilon traces

inline std::string epsilon_csv(const EpsilonTrace& trace) {
  std::size_t dim = 0;
  for (const EpsilonSample& s : trace.samples)
    if (s.eps) dim = std::max(dim, s.eps->size());

  std::string out = "t,player";
  for (std::size_t c = 0; c < dim; ++c) out += ",eps_" + std::to_string(c);
  out += ",flag,residual\n";
  for (const EpsilonSample& s : trace.samples) {
    out += fmt17(s.t) + "," + std::to_string(s.player);
    for (std::size_t c = 0; c < dim; ++c) {
      out += ",";
      if (s.eps && c < s.eps->size()) out += fmt17((*s.eps)[c]);
    }
    out += std::string(",") + to_string(s.flag) + "," + fmt17(s.residual) +
           "\n";
  }
  return out;
}

inline std::string epsilon_jsonl(const EpsilonTrace& trace) {
  std::string out;
  for (const EpsilonSample& s : trace.samples) {
    nlohmann::ordered_json line;
    line["t"] = s.t;
    line["player"] = s.player;
    if (s.eps)
      line["eps"] = *s.eps;
    else
      line["eps"] = nullptr;
    line["flag"] = to_string(s.flag);
    if (std::isfinite(s.residual))
      line["residual"] = s.residual;
    else
      line["residual"] = nullptr;
    out += line.dump() + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Omen reports

inline nlohmann::ordered_json omen_report_json(const OmenReport& report) {
  nlohmann::ordered_json out;
  out["entries"] = nlohmann::ordered_json::array();
  for (const OmenEntry& e : report.entries) {
    nlohmann::ordered_json ej;
    ej["name"] = e.name;
    ej["verdict"] = to_string(e.verdict);
    ej["relative_variation"] = e.relative_variation;
    ej["c0"] = e.c0 ? nlohmann::ordered_json(*e.c0) : nullptr;
    ej["c1"] = e.c1 ? nlohmann::ordered_json(*e.c1) : nullptr;
    ej["residual_rms"] =
        e.residual_rms ? nlohmann::ordered_json(*e.residual_rms) : nullptr;
    ej["t_first"] = e.t_first;
    ej["t_last"] = e.t_last;
    ej["sample_count"] = e.sample_count;
    ej["error"] = e.error ? nlohmann::ordered_json(*e.error) : nullptr;
    out["entries"].push_back(std::move(ej));
  }
  return out;
}

inline nlohmann::ordered_json stability_report_json(
    const StabilityReport& report) {
  nlohmann::ordered_json out;
  out["entries"] = nlohmann::ordered_json::array();
  for (const StabilityEntry& e : report.entries) {
    nlohmann::ordered_json ej;
    ej["name"] = e.name;
    ej["base_verdict"] = to_string(e.base_verdict);
    ej["flips"] = e.flips;
    ej["trials"] = e.trials;
    ej["flip_rate"] = e.flip_rate;
    out["entries"].push_back(std::move(ej));
  }
  return out;
}

inline std::vector<QuantityCandidate> candidates_from_json(
    const nlohmann::json& j, const std::string& where = "candidates") {
  if (!j.is_array())
    throw LoadError("BAD_TYPE", where, "expected an array");
  std::vector<QuantityCandidate> out;
  for (std::size_t k = 0; k < j.size(); ++k) {
    const std::string path = where + "[" + std::to_string(k) + "]";
    QuantityCandidate q;
    q.name = detail::json_str(detail::require_field(j[k], "name", path),
                              path + ".name");
    q.expr = detail::json_expr(detail::require_field(j[k], "expr", path),
                               path + ".expr");
    out.push_back(std::move(q));
  }
  return out;
}

inline std::vector<QuantityCandidate> load_candidates(
    const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("BAD_JSON", path, e.what());
  }
  return candidates_from_json(j, path);
}

// ---------------------------------------------------------------------------
// Prediction artifacts

inline std::string prediction_log_jsonl(const PredictionLog& log) {
  std::string out;
  for (const auto& [index, p] : log.anchors) {
    nlohmann::ordered_json line;
    line["anchor_index"] = index;
    line["t0"] = p.t0();
    line["depth"] = p.depth();
    line["predictor"] = p.predictor();
    line["players"] = p.players();
    line["times"] = p.times();
    line["controls"] = p.controls();
    line["state_path"] = p.state_path();
    out += line.dump() + "\n";
  }
  return out;
}

inline nlohmann::ordered_json metrics_json(const PredictionRun& run) {
  nlohmann::ordered_json out;
  double base_max = 0.0, corr_max = 0.0;
  int evaluated = 0;
  for (const AnchorRecord& r : run.anchors) {
    if (r.baseline_metrics) ++evaluated;
    if (!r.baseline_metrics || !r.corrected_metrics) continue;
    base_max = std::max(base_max, r.baseline_metrics->state_max);
    corr_max = std::max(corr_max, r.corrected_metrics->state_max);
  }
  out["total_anchors"] = run.anchors.size();
  out["evaluated_anchors"] = evaluated;
  out["baseline"]["state_rmse"] = run.aggregate.baseline_state_rmse;
  out["baseline"]["state_max"] = base_max;
  out["baseline"]["anchors"] = run.aggregate.compared_anchors;
  out["corrected"]["state_rmse"] = run.aggregate.corrected_state_rmse;
  out["corrected"]["state_max"] = corr_max;
  out["corrected"]["anchors"] = run.aggregate.compared_anchors;
  out["improved"] = run.aggregate.improved;
  out["improved_fraction"] = run.aggregate.improved_fraction;
  out["per_anchor"] = nlohmann::ordered_json::array();
  for (const AnchorRecord& r : run.anchors) {
    nlohmann::ordered_json rj;
    rj["t0"] = r.t0;
    rj["baseline_state_rmse"] =
        r.baseline_metrics ? nlohmann::ordered_json(r.baseline_metrics->state_rmse)
                           : nullptr;
    rj["corrected_state_rmse"] =
        r.corrected_metrics
            ? nlohmann::ordered_json(r.corrected_metrics->state_rmse)
            : nullptr;
    if (r.baseline_metrics && r.corrected_metrics)
      rj["improved"] = r.corrected_metrics->state_rmse <
                       r.baseline_metrics->state_rmse;
    else
      rj["improved"] = nullptr;
    out["per_anchor"].push_back(std::move(rj));
  }
  return out;
}

inline nlohmann::ordered_json prognosis_json(const Prognosis& prog) {
  nlohmann::ordered_json out;
  out["game"] = prog.realized.game_name;
  out["rule"] = prog.combination_rule;
  out["grid"]["t0"] = prog.realized.samples.front().t;
  out["grid"]["t1"] = prog.realized.samples.back().t;
  out["grid"]["step"] = prog.realized.step;
  auto states = [](const Trajectory& t) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const TrajectorySample& s : t.samples) arr.push_back(s.phi);
    return arr;
  };
  out["long_term_state"] = states(prog.long_term);
  out["realized_state"] = states(prog.realized);
  out["combined_state"] = prog.combined_state;
  out["anchors"] = nlohmann::ordered_json::array();
  for (const AnchorRecord& r : prog.run.anchors) {
    nlohmann::ordered_json rj;
    rj["t0"] = r.t0;
    rj["corrected"] = r.has_corrected;
    out["anchors"].push_back(std::move(rj));
  }
  out["segments"] = nlohmann::ordered_json::array();
  for (const auto& [k, p] : prog.run.corrected) {
    nlohmann::ordered_json sj;
    sj["t0"] = p.t0();
    sj["state_path"] = p.state_path();
    out["segments"].push_back(std::move(sj));
  }
  return out;
}

}  // namespace igame
