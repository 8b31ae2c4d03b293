#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mjls/chance.hpp"
#include "mjls/controller.hpp"
#include "mjls/errors.hpp"
#include "mjls/model.hpp"
#include "mjls/moments.hpp"
#include "mjls/sdp.hpp"
#include "mjls/simulate.hpp"
#include "mjls/steer.hpp"

namespace mjls {

// Everything a problem file can describe.  `chance`, `schedule` and `sim`
// are optional in the file and fall back to the defaults here.
struct ProblemConfig {
  MjlsModel model;
  BoundarySpec boundary;
  ChanceSpec chance;
  IterationSchedule schedule{{1.0}};
  SimConfig sim;
};

namespace config_detail {

using nlohmann::json;

[[noreturn]] inline void fail(const std::string& where, const std::string& what) {
  throw ConfigError(where + ": " + what);
}

// Nesting depth of a JSON value: scalar -> 0, array of scalars -> 1, ...
inline int depth(const json& j) {
  int d = 0;
  const json* cur = &j;
  while (cur->is_array()) {
    if (cur->empty()) return d + 1;
    ++d;
    cur = &(*cur)[0];
  }
  return d;
}

inline Vec parse_vec(const json& j, const std::string& where) {
  if (!j.is_array()) fail(where, "expected an array of numbers");
  Vec v(j.size());
  for (size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(where, "expected an array of numbers");
    v(static_cast<int>(i)) = j[i].get<double>();
  }
  return v;
}

inline Mat parse_mat(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    fail(where, "expected a matrix (array of rows)");
  const size_t rows = j.size(), cols = j[0].size();
  Mat m(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      fail(where, "ragged matrix rows");
    for (size_t c = 0; c < cols; ++c) {
      if (!j[r][c].is_number()) fail(where, "matrix entries must be numbers");
      m(static_cast<int>(r), static_cast<int>(c)) = j[r][c].get<double>();
    }
  }
  return m;
}

// Per-mode matrix sequence: entry j is either one matrix (constant over k)
// or a list of `horizon` matrices.
inline std::vector<std::vector<Mat>> parse_mode_seq(const json& j, int horizon,
                                                    int n_modes,
                                                    const std::string& where) {
  if (!j.is_array() || static_cast<int>(j.size()) != n_modes)
    fail(where, "expected one entry per mode (" + std::to_string(n_modes) + ")");
  std::vector<std::vector<Mat>> out(horizon, std::vector<Mat>(n_modes));
  for (int m = 0; m < n_modes; ++m) {
    const json& e = j[m];
    const int d = depth(e);
    if (d == 2) {
      Mat mat = parse_mat(e, where + "[" + std::to_string(m) + "]");
      for (int k = 0; k < horizon; ++k) out[k][m] = mat;
    } else if (d == 3) {
      if (static_cast<int>(e.size()) != horizon)
        fail(where + "[" + std::to_string(m) + "]",
             "per-step list must have horizon entries");
      for (int k = 0; k < horizon; ++k)
        out[k][m] = parse_mat(e[k], where + "[" + std::to_string(m) + "][" +
                                        std::to_string(k) + "]");
    } else {
      fail(where + "[" + std::to_string(m) + "]",
           "expected a matrix or a per-step list of matrices");
    }
  }
  return out;
}

// Per-mode, per-channel multiplicative sequence: entry [j][r] is a matrix or
// a per-step list.
inline std::vector<std::vector<std::vector<Mat>>> parse_mult_seq(
    const json& j, int horizon, int n_modes, int channels,
    const std::string& where) {
  std::vector<std::vector<std::vector<Mat>>> out(
      horizon, std::vector<std::vector<Mat>>(n_modes, std::vector<Mat>(channels)));
  if (channels == 0) {
    if (!j.is_null() && !(j.is_array() && (j.empty() || j[0].empty())))
      fail(where, "channel count is 0 but entries were given");
    for (int k = 0; k < horizon; ++k)
      for (int m = 0; m < n_modes; ++m) out[k][m].clear();
    return out;
  }
  if (!j.is_array() || static_cast<int>(j.size()) != n_modes)
    fail(where, "expected one entry per mode (" + std::to_string(n_modes) + ")");
  for (int m = 0; m < n_modes; ++m) {
    const json& mode = j[m];
    if (!mode.is_array() || static_cast<int>(mode.size()) != channels)
      fail(where + "[" + std::to_string(m) + "]",
           "expected one entry per channel (" + std::to_string(channels) + ")");
    for (int r = 0; r < channels; ++r) {
      const json& e = mode[r];
      const std::string tag =
          where + "[" + std::to_string(m) + "][" + std::to_string(r) + "]";
      const int d = depth(e);
      if (d == 2) {
        Mat mat = parse_mat(e, tag);
        for (int k = 0; k < horizon; ++k) out[k][m][r] = mat;
      } else if (d == 3) {
        if (static_cast<int>(e.size()) != horizon)
          fail(tag, "per-step list must have horizon entries");
        for (int k = 0; k < horizon; ++k)
          out[k][m][r] = parse_mat(e[k], tag + "[" + std::to_string(k) + "]");
      } else {
        fail(tag, "expected a matrix or a per-step list of matrices");
      }
    }
  }
  return out;
}

// Vector given once (broadcast) or as a per-mode list.
inline std::vector<Vec> parse_vec_per_mode(const json& j, int n_modes,
                                           const std::string& where) {
  const int d = depth(j);
  if (d == 1) return std::vector<Vec>(n_modes, parse_vec(j, where));
  if (d == 2) {
    if (static_cast<int>(j.size()) != n_modes)
      fail(where, "expected " + std::to_string(n_modes) + " per-mode vectors");
    std::vector<Vec> out;
    for (size_t i = 0; i < j.size(); ++i)
      out.push_back(parse_vec(j[i], where + "[" + std::to_string(i) + "]"));
    return out;
  }
  fail(where, "expected a vector or a per-mode list of vectors");
}

inline std::vector<Mat> parse_mat_per_mode(const json& j, int n_modes,
                                           const std::string& where) {
  const int d = depth(j);
  if (d == 2) return std::vector<Mat>(n_modes, parse_mat(j, where));
  if (d == 3) {
    if (static_cast<int>(j.size()) != n_modes)
      fail(where, "expected " + std::to_string(n_modes) + " per-mode matrices");
    std::vector<Mat> out;
    for (size_t i = 0; i < j.size(); ++i)
      out.push_back(parse_mat(j[i], where + "[" + std::to_string(i) + "]"));
    return out;
  }
  fail(where, "expected a matrix or a per-mode list of matrices");
}

inline TerminalKind parse_terminal_kind(const std::string& s,
                                        const std::string& where) {
  if (s == "unconditional_equality") return TerminalKind::unconditional_equality;
  if (s == "unconditional_upper_bound") return TerminalKind::unconditional_upper_bound;
  if (s == "modewise_equality") return TerminalKind::modewise_equality;
  if (s == "modewise_upper_bound") return TerminalKind::modewise_upper_bound;
  fail(where, "unknown terminal kind '" + s +
                  "' (expected unconditional_equality, unconditional_upper_bound, "
                  "modewise_equality or modewise_upper_bound)");
}

// Constraint step field: "step": k, or "steps": {"from": a, "to": b}
// (inclusive), or "steps": [k1, k2, ...].
inline std::vector<int> parse_steps(const json& e, const std::string& where) {
  const bool has_step = e.contains("step"), has_steps = e.contains("steps");
  if (has_step == has_steps)
    fail(where, "give exactly one of \"step\" or \"steps\"");
  if (has_step) {
    if (!e["step"].is_number_integer()) fail(where, "\"step\" must be an integer");
    return {e["step"].get<int>()};
  }
  const json& s = e["steps"];
  if (s.is_array()) {
    std::vector<int> out;
    for (const auto& v : s) {
      if (!v.is_number_integer()) fail(where, "\"steps\" entries must be integers");
      out.push_back(v.get<int>());
    }
    return out;
  }
  if (s.is_object()) {
    if (!s.contains("from") || !s.contains("to"))
      fail(where, "\"steps\" object needs \"from\" and \"to\"");
    const int from = s["from"].get<int>(), to = s["to"].get<int>();
    if (to < from) fail(where, "\"steps\": to < from");
    std::vector<int> out;
    for (int k = from; k <= to; ++k) out.push_back(k);
    return out;
  }
  fail(where, "\"steps\" must be a {from, to} object or a list of integers");
}

inline std::vector<Vec> parse_refs(const json& e, int n_modes,
                                   const std::string& where) {
  if (!e.contains("ref")) return {};
  return parse_vec_per_mode(e["ref"], n_modes, where + ".ref");
}

inline json vec_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline json mat_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

}  // namespace config_detail

inline ProblemConfig parse_problem(const nlohmann::json& root) {
  using config_detail::fail;
  using nlohmann::json;
  ProblemConfig cfg;

  if (!root.is_object()) fail("problem", "top level must be an object");
  if (!root.contains("model")) fail("problem", "missing \"model\"");
  const json& jm = root["model"];

  auto need_int = [&](const json& j, const char* key, const std::string& where) {
    if (!j.contains(key) || !j[key].is_number_integer())
      fail(where, std::string("missing integer \"") + key + "\"");
    return j[key].get<int>();
  };

  MjlsModel& m = cfg.model;
  m.horizon = need_int(jm, "horizon", "model");
  m.n_modes = need_int(jm, "n_modes", "model");
  m.n_x = need_int(jm, "n_x", "model");
  m.n_u = need_int(jm, "n_u", "model");
  m.n_w = need_int(jm, "n_w", "model");
  m.m_x = jm.contains("m_x") ? need_int(jm, "m_x", "model") : 0;
  m.m_u = jm.contains("m_u") ? need_int(jm, "m_u", "model") : 0;
  if (m.horizon < 1) fail("model", "horizon must be >= 1");
  if (m.n_modes < 1 || m.n_x < 1 || m.n_u < 1 || m.n_w < 1)
    fail("model", "n_modes, n_x, n_u, n_w must be >= 1");
  if (m.m_x < 0 || m.m_u < 0) fail("model", "m_x, m_u must be >= 0");

  if (jm.contains("noise_family")) {
    const std::string fam = jm["noise_family"].get<std::string>();
    if (fam == "gaussian") m.noise_family = NoiseFamily::gaussian;
    else if (fam == "rademacher") m.noise_family = NoiseFamily::rademacher;
    else fail("model", "noise_family must be \"gaussian\" or \"rademacher\"");
  }

  auto seq = [&](const char* key, const char* what) {
    if (!jm.contains(key)) fail("model", std::string("missing \"") + what + "\"");
    return config_detail::parse_mode_seq(jm[key], m.horizon, m.n_modes,
                                         std::string("model.") + what);
  };
  m.A = seq("A", "A");
  m.B = seq("B", "B");
  m.D = seq("D", "D");
  m.Q = seq("Q", "Q");
  m.R = seq("R", "R");
  m.A_mult = config_detail::parse_mult_seq(
      jm.contains("A_mult") ? jm["A_mult"] : json(), m.horizon, m.n_modes, m.m_x,
      "model.A_mult");
  m.B_mult = config_detail::parse_mult_seq(
      jm.contains("B_mult") ? jm["B_mult"] : json(), m.horizon, m.n_modes, m.m_u,
      "model.B_mult");

  if (!jm.contains("P")) fail("model", "missing \"P\"");
  {
    const int d = config_detail::depth(jm["P"]);
    if (d == 2) {
      Mat P = config_detail::parse_mat(jm["P"], "model.P");
      m.P.assign(m.horizon, P);
    } else if (d == 3) {
      if (static_cast<int>(jm["P"].size()) != m.horizon)
        fail("model.P", "per-step list must have horizon entries");
      m.P.clear();
      for (int k = 0; k < m.horizon; ++k)
        m.P.push_back(config_detail::parse_mat(jm["P"][k],
                                               "model.P[" + std::to_string(k) + "]"));
    } else {
      fail("model.P", "expected a matrix or a per-step list of matrices");
    }
  }
  if (!jm.contains("rho0")) fail("model", "missing \"rho0\"");
  m.rho0 = config_detail::parse_vec(jm["rho0"], "model.rho0");

  if (!root.contains("boundary")) fail("problem", "missing \"boundary\"");
  const json& jb = root["boundary"];
  if (!jb.contains("initial")) fail("boundary", "missing \"initial\"");
  if (!jb.contains("terminal")) fail("boundary", "missing \"terminal\"");
  const json& ji = jb["initial"];
  const json& jt = jb["terminal"];
  if (!ji.contains("mu") || !ji.contains("Sigma"))
    fail("boundary.initial", "needs \"mu\" and \"Sigma\"");
  cfg.boundary.mu_in =
      config_detail::parse_vec_per_mode(ji["mu"], m.n_modes, "boundary.initial.mu");
  cfg.boundary.Sigma_in = config_detail::parse_mat_per_mode(
      ji["Sigma"], m.n_modes, "boundary.initial.Sigma");
  if (!jt.contains("kind") || !jt["kind"].is_string())
    fail("boundary.terminal", "missing string \"kind\"");
  cfg.boundary.kind = config_detail::parse_terminal_kind(
      jt["kind"].get<std::string>(), "boundary.terminal.kind");
  if (!jt.contains("mu") || !jt.contains("Sigma"))
    fail("boundary.terminal", "needs \"mu\" and \"Sigma\"");
  const int n_term = terminal_is_modewise(cfg.boundary.kind) ? m.n_modes : 1;
  cfg.boundary.mu_out =
      config_detail::parse_vec_per_mode(jt["mu"], n_term, "boundary.terminal.mu");
  cfg.boundary.Sigma_out = config_detail::parse_mat_per_mode(
      jt["Sigma"], n_term, "boundary.terminal.Sigma");

  if (root.contains("chance")) {
    const json& jc = root["chance"];
    auto parse_balls = [&](const char* key, std::vector<BallConstraint>& out) {
      if (!jc.contains(key)) return;
      int idx = 0;
      for (const auto& e : jc[key]) {
        const std::string where =
            std::string("chance.") + key + "[" + std::to_string(idx++) + "]";
        if (!e.contains("center") || !e.contains("radius") || !e.contains("eps"))
          fail(where, "needs \"center\", \"radius\", \"eps\"");
        BallConstraint base;
        base.center = config_detail::parse_vec(e["center"], where + ".center");
        base.radius = e["radius"].get<double>();
        base.eps = e["eps"].get<double>();
        base.ref = config_detail::parse_refs(e, m.n_modes, where);
        for (int k : config_detail::parse_steps(e, where)) {
          BallConstraint b = base;
          b.step = k;
          out.push_back(std::move(b));
        }
      }
    };
    auto parse_halfs = [&](const char* key, std::vector<HalfspaceConstraint>& out) {
      if (!jc.contains(key)) return;
      int idx = 0;
      for (const auto& e : jc[key]) {
        const std::string where =
            std::string("chance.") + key + "[" + std::to_string(idx++) + "]";
        if (!e.contains("normal") || !e.contains("offset") || !e.contains("eps"))
          fail(where, "needs \"normal\", \"offset\", \"eps\"");
        HalfspaceConstraint base;
        base.normal = config_detail::parse_vec(e["normal"], where + ".normal");
        base.offset = e["offset"].get<double>();
        base.eps = e["eps"].get<double>();
        base.ref = config_detail::parse_refs(e, m.n_modes, where);
        for (int k : config_detail::parse_steps(e, where)) {
          HalfspaceConstraint h = base;
          h.step = k;
          out.push_back(std::move(h));
        }
      }
    };
    parse_balls("ball_state", cfg.chance.ball_state);
    parse_balls("ball_control", cfg.chance.ball_control);
    parse_halfs("half_state", cfg.chance.half_state);
    parse_halfs("half_control", cfg.chance.half_control);
  }

  if (root.contains("schedule")) {
    const json& js = root["schedule"];
    if (!js.contains("gammas") || !js["gammas"].is_array() || js["gammas"].empty())
      fail("schedule", "needs a non-empty \"gammas\" array");
    cfg.schedule.gammas.clear();
    for (const auto& g : js["gammas"]) {
      const double gv = g.get<double>();
      if (!(gv > 0.0)) fail("schedule.gammas", "entries must be positive");
      cfg.schedule.gammas.push_back(gv);
    }
  }

  if (root.contains("sim")) {
    const json& js = root["sim"];
    if (js.contains("samples")) cfg.sim.samples = js["samples"].get<long>();
    if (js.contains("seed")) cfg.sim.seed = js["seed"].get<uint64_t>();
    if (js.contains("quantile")) cfg.sim.quantile = js["quantile"].get<double>();
    if (js.contains("initial")) {
      const std::string s = js["initial"].get<std::string>();
      if (s == "gaussian") cfg.sim.initial = InitialDistribution::gaussian;
      else if (s == "uniform_ellipsoid")
        cfg.sim.initial = InitialDistribution::uniform_ellipsoid;
      else fail("sim.initial", "expected \"gaussian\" or \"uniform_ellipsoid\"");
    }
    if (js.contains("record_trajectories"))
      cfg.sim.record_trajectories = js["record_trajectories"].get<long>();
  }

  return cfg;
}

inline ProblemConfig load_problem(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open problem file: " + path);
  nlohmann::json root;
  try {
    in >> root;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  try {
    return parse_problem(root);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed problem file " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Policy and moment-trajectory round trips.

inline nlohmann::json policy_to_json(const Policy& pol) {
  using config_detail::mat_json;
  nlohmann::json j;
  j["horizon"] = pol.T;
  j["n_modes"] = pol.n_modes;
  j["n_x"] = pol.n_x;
  j["n_u"] = pol.n_u;
  auto dump = [&](const std::vector<std::vector<Mat>>& seq) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& step : seq) {
      nlohmann::json row = nlohmann::json::array();
      for (const auto& mat : step) row.push_back(mat_json(mat));
      a.push_back(row);
    }
    return a;
  };
  j["K"] = dump(pol.K);
  j["V"] = dump(pol.V);
  return j;
}

inline Policy policy_from_json(const nlohmann::json& j) {
  using config_detail::fail;
  Policy pol;
  if (!j.contains("horizon") || !j.contains("n_modes") || !j.contains("K") ||
      !j.contains("V"))
    fail("policy", "needs \"horizon\", \"n_modes\", \"K\", \"V\"");
  pol.T = j["horizon"].get<int>();
  pol.n_modes = j["n_modes"].get<int>();
  pol.n_x = j["n_x"].get<int>();
  pol.n_u = j["n_u"].get<int>();
  auto read = [&](const nlohmann::json& a, const char* what) {
    if (!a.is_array() || static_cast<int>(a.size()) != pol.T)
      fail("policy", std::string(what) + " must have horizon entries");
    std::vector<std::vector<Mat>> seq(pol.T);
    for (int k = 0; k < pol.T; ++k) {
      if (!a[k].is_array() || static_cast<int>(a[k].size()) != pol.n_modes)
        fail("policy", std::string(what) + " entries must list every mode");
      for (int jj = 0; jj < pol.n_modes; ++jj)
        seq[k].push_back(config_detail::parse_mat(
            a[k][jj], std::string("policy.") + what + "[" + std::to_string(k) +
                          "][" + std::to_string(jj) + "]"));
    }
    return seq;
  };
  pol.K = read(j["K"], "K");
  pol.V = read(j["V"], "V");
  // Rebuild the noise factors under the same acceptance rule as extraction:
  // eigenvalues in [-1e-8, 0) clip to zero, anything lower is rejected.
  pol.V_sqrt.assign(pol.T, std::vector<Mat>(pol.n_modes));
  for (int k = 0; k < pol.T; ++k)
    for (int jj = 0; jj < pol.n_modes; ++jj) {
      Mat V = symmetrize(pol.V[k][jj]);
      Eigen::SelfAdjointEigenSolver<Mat> es(V);
      Vec ev = es.eigenvalues();
      for (int i = 0; i < ev.size(); ++i) {
        if (ev(i) < -1e-8)
          throw NotRealizable("policy noise covariance at step " +
                              std::to_string(k) + ", mode " + std::to_string(jj) +
                              " has eigenvalue " + std::to_string(ev(i)));
        if (ev(i) < 0.0) ev(i) = 0.0;
      }
      // Same factor convention as extract(), so a saved-then-loaded policy
      // reproduces the exact same simulated trajectories.
      pol.V_sqrt[k][jj] = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
      pol.V[k][jj] = V;
    }
  return pol;
}

inline Policy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open policy file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("invalid JSON in " + path + ": " + e.what());
  }
  try {
    return policy_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("malformed policy file " + path + ": " + e.what());
  }
}

inline nlohmann::json trajectory_to_json(const MomentTrajectory& traj) {
  using config_detail::mat_json;
  auto dump = [&](const std::vector<std::vector<Mat>>& seq) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& step : seq) {
      nlohmann::json row = nlohmann::json::array();
      for (const auto& mat : step) row.push_back(mat_json(mat));
      a.push_back(row);
    }
    return a;
  };
  nlohmann::json j;
  j["I_bar"] = dump(traj.I_bar);
  j["U_bar"] = dump(traj.U_bar);
  j["Y_bar"] = dump(traj.Y_bar);
  return j;
}

inline nlohmann::json report_summary_json(const SimReport& rep) {
  nlohmann::json j;
  j["samples"] = rep.samples;
  j["cost_mean"] = rep.cost_mean;
  j["cost_se"] = rep.cost_se;
  j["violations"] = nlohmann::json::array();
  for (const auto& v : rep.violations) {
    nlohmann::json e;
    e["id"] = v.id;
    e["rate"] = v.rate;
    e["se"] = v.se;
    e["count"] = v.count;
    j["violations"].push_back(e);
  }
  return j;
}

// Debug dump of an assembled conic program.
inline nlohmann::json program_to_json(const AssembledProgram& ap) {
  using config_detail::mat_json;
  nlohmann::json j;
  const ConicProgram& p = ap.program;
  j["num_vars"] = p.num_vars;
  j["terminal"] = terminal_kind_name(ap.terminal);
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : p.blocks) {
    nlohmann::json e;
    e["name"] = b.name;
    e["shape"] = b.shape == VarBlock::Shape::sym ? "sym" : "rect";
    e["rows"] = b.rows;
    e["cols"] = b.cols;
    e["offset"] = b.offset;
    e["span"] = b.span;
    j["blocks"].push_back(e);
  }
  nlohmann::json cvec = nlohmann::json::array();
  for (int i = 0; i < p.c.size(); ++i) cvec.push_back(p.c(i));
  j["c"] = cvec;
  auto rows_json = [&](const std::vector<LinearRow>& rows) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json e;
      e["group"] = row_group_name(r.group);
      e["id"] = r.id;
      e["rhs"] = r.rhs;
      nlohmann::json coef = nlohmann::json::array();
      for (const auto& [idx, val] : r.coef) coef.push_back({idx, val});
      e["coef"] = coef;
      a.push_back(e);
    }
    return a;
  };
  j["equalities"] = rows_json(p.equalities);
  j["inequalities"] = rows_json(p.inequalities);
  j["memberships"] = nlohmann::json::array();
  for (const auto& mem : p.memberships) {
    nlohmann::json e;
    e["name"] = mem.name;
    e["dim"] = mem.dim;
    e["cols"] = mem.cols;
    e["P"] = mat_json(mem.P);
    nlohmann::json cst = nlohmann::json::array();
    for (int i = 0; i < mem.constant.size(); ++i) cst.push_back(mem.constant(i));
    e["constant"] = cst;
    j["memberships"].push_back(e);
  }
  return j;
}

}  // namespace mjls
