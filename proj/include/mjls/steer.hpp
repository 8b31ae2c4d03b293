#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
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

namespace mjls {

struct IterationSchedule {
  std::vector<double> gammas;  // relaxation scale per iteration (last one usually 1)
};

// Snapshot of one iteration of the reference-update loop.  `spec_used` holds
// the constraint set exactly as it entered the solver: resolved per-mode
// reference points and the scaled risk levels min(gamma * eps, 1).
struct IterationRecord {
  int m = 0;  // 1-based
  double gamma = 1.0;
  SolveResult::Status status = SolveResult::Status::numerical_failure;
  double objective = std::numeric_limits<double>::quiet_NaN();
  ChanceSpec spec_used;
  std::string message;
};

struct SteerResult {
  std::vector<IterationRecord> iterations;
  SolveResult solution;  // last optimal solve
  Policy policy;
  int last_optimal_m = -1;  // 1-based index of the iteration `solution` came from
  bool final_iteration_optimal = false;
  std::string warning;
};

namespace steer_detail {

// Canonical per-entry labels, shared with the simulator's violation table:
// the four lists in order, "#n" suffix on repeated (kind, step) pairs.
inline std::vector<std::string> entry_ids(const ChanceSpec& spec) {
  std::vector<std::string> ids;
  auto push = [&](const char* kind, int step) {
    std::string base = std::string(kind) + "[k=" + std::to_string(step) + "]";
    int dup = 0;
    for (const auto& prev : ids)
      if (prev == base || prev.rfind(base + "#", 0) == 0) ++dup;
    ids.push_back(dup > 0 ? base + "#" + std::to_string(dup) : base);
  };
  for (const auto& b : spec.ball_state) push("ball_state", b.step);
  for (const auto& b : spec.ball_control) push("ball_control", b.step);
  for (const auto& h : spec.half_state) push("half_state", h.step);
  for (const auto& h : spec.half_control) push("half_control", h.step);
  return ids;
}

struct ModeStats {
  Vec mean;
  Mat theta;                 // conditional second moment E[y y' | mode]
  double trace_theta = 0.0;  // its trace
};

inline ModeStats state_stats(const MomentTrajectory& traj, int step, int j) {
  const Mat& I = traj.I_bar[step][j];
  const int nx = static_cast<int>(I.rows()) - 1;
  ModeStats st;
  st.mean = I.col(nx).head(nx);
  st.theta = I.topLeftCorner(nx, nx);
  st.trace_theta = st.theta.trace();
  return st;
}

inline ModeStats control_stats(const MomentTrajectory& traj, int step, int j) {
  const Mat& U = traj.U_bar[step][j];
  const Mat& Y = traj.Y_bar[step][j];
  ModeStats st;
  st.mean = U.col(U.cols() - 1);
  st.theta = Y;
  st.trace_theta = Y.trace();
  return st;
}

// Margin guard for halfspace reference updates.  The tangent-point update
// (reference = conditional mean) is optimal when the mean sits strictly
// inside the halfspace, but an optimal iterate often rides the mean boundary
// a'mu = b exactly; a reference placed on that boundary turns the next
// variance row into a zero-variance requirement, which no trajectory with
// additive noise can meet, and the remaining iterations all go infeasible.
// The guard pulls the reference along the constraint normal until the next
// subproblem, at risk level eps_next, can retain the current conditional
// variance along the normal: with gap d = b - a'ref, the variance row built
// at the reference admits moment matrices with a'Cov(a) up to
// eps*d^2/(1-eps)^2, so d >= (1-eps)*sigma/sqrt(eps) keeps the current
// spread admissible.  Means with at least that margin are left untouched,
// so the guard vanishes wherever the plain update is sound.
inline Vec guarded_half_reference(const ModeStats& st, const Vec& normal,
                                  double offset, double eps_next) {
  Vec ref = update_half_reference(st.mean);
  if (eps_next >= 1.0) return ref;
  const double my = normal.dot(ref);
  const double var =
      std::max(0.0, normal.dot(st.theta * normal) - my * my);
  const double dreq = (1.0 - eps_next) * std::sqrt(var / eps_next);
  if (offset - my >= dreq) return ref;
  return ref + ((offset - dreq - my) / normal.squaredNorm()) * normal;
}

}  // namespace steer_detail

// Flattens a constraint specification into solver rows, scaling every risk
// level by `gamma` (capped at one).  References enter as given; empty ones
// resolve to the default point the row builders would use.
inline std::vector<TraceConstraint> build_chance_rows(const MjlsModel& model,
                                                      const std::vector<Vec>& rhos,
                                                      const ChanceSpec& spec,
                                                      double gamma = 1.0) {
  const int T = model.horizon;
  const auto ids = steer_detail::entry_ids(spec);
  std::vector<TraceConstraint> rows;
  size_t pos = 0;
  auto scaled = [&](double eps) { return std::min(gamma * eps, 1.0); };
  for (const auto& b : spec.ball_state) {
    if (b.step < 0 || b.step > T)
      throw ConfigError("ball state constraint at step " + std::to_string(b.step) +
                        " outside [0, T]");
    rows.push_back(build_ball_state(b, rhos[b.step], scaled(b.eps), ids[pos++]));
  }
  for (const auto& b : spec.ball_control) {
    if (b.step < 0 || b.step >= T)
      throw ConfigError("ball control constraint at step " + std::to_string(b.step) +
                        " outside [0, T)");
    rows.push_back(
        build_ball_control(b, rhos[b.step], scaled(b.eps), model.n_x, ids[pos++]));
  }
  for (const auto& h : spec.half_state) {
    if (h.step < 0 || h.step > T)
      throw ConfigError("halfspace state constraint at step " + std::to_string(h.step) +
                        " outside [0, T]");
    auto r = build_half_state(h, model.n_modes, scaled(h.eps), ids[pos++]);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  for (const auto& h : spec.half_control) {
    if (h.step < 0 || h.step >= T)
      throw ConfigError("halfspace control constraint at step " + std::to_string(h.step) +
                        " outside [0, T)");
    auto r = build_half_control(h, model.n_modes, scaled(h.eps), model.n_x, ids[pos++]);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  return rows;
}

inline SolveResult solve_unconstrained(const MjlsModel& model,
                                       const BoundarySpec& boundary,
                                       const SolverBackend& backend = default_backend(),
                                       const AssembleOptions& opts = {}) {
  auto ap = assemble(model, boundary, {}, opts);
  return solve(ap, backend);
}

// Iterative tightening loop: for each scale factor gamma_m, the surrogate rows
// are rebuilt around the current reference points with risk levels
// min(gamma_m * eps, 1) and the moment program is re-solved.  After an optimal
// solve the references move to the new moment trajectory (balls through the
// constrained interpolation step, halfspaces to the conditional means); an
// infeasible or failed solve leaves them where they were.  The returned policy
// comes from the last optimal iterate.
inline SteerResult steer_iterative(const MjlsModel& model,
                                   const BoundarySpec& boundary,
                                   const ChanceSpec& chance,
                                   const IterationSchedule& schedule,
                                   const SolverBackend& backend = default_backend(),
                                   const AssembleOptions& aopts = {}) {
  if (schedule.gammas.empty())
    throw ConfigError("steer: the iteration schedule is empty");
  const auto rhos = mode_priors(model);
  const int N = model.n_modes;

  SteerResult out;
  ChanceSpec current = chance;  // original eps; refs evolve across iterations
  const size_t M = chance.empty() ? 1 : schedule.gammas.size();

  for (size_t mi = 0; mi < M; ++mi) {
    const double gamma = schedule.gammas[mi];
    // Resolve per-mode references for the record (validating explicit ones),
    // then scale the risk levels.
    ChanceSpec used = current;
    auto resolve_ball = [&](BallConstraint& b) {
      std::vector<Vec> refs(N);
      for (int j = 0; j < N; ++j) refs[j] = detail::ball_ref(b, j);
      b.ref = std::move(refs);
      b.eps = std::min(gamma * b.eps, 1.0);
    };
    auto resolve_half = [&](HalfspaceConstraint& h, int dim) {
      std::vector<Vec> refs(N);
      for (int j = 0; j < N; ++j) refs[j] = detail::half_ref(h, j, dim);
      h.ref = std::move(refs);
      h.eps = std::min(gamma * h.eps, 1.0);
    };
    for (auto& b : used.ball_state) resolve_ball(b);
    for (auto& b : used.ball_control) resolve_ball(b);
    for (auto& h : used.half_state) resolve_half(h, model.n_x);
    for (auto& h : used.half_control) resolve_half(h, model.n_u);

    auto rows = build_chance_rows(model, rhos, used, 1.0);
    auto ap = assemble(model, boundary, rows, aopts);
    SolveResult res = solve(ap, backend);

    IterationRecord rec;
    rec.m = static_cast<int>(mi) + 1;
    rec.gamma = gamma;
    rec.status = res.status;
    rec.message = res.message;
    rec.spec_used = used;
    if (res.status == SolveResult::Status::optimal) {
      rec.objective = res.objective;
      // Move references to the new trajectory, mode by mode.
      for (auto& b : current.ball_state) {
        b.ref.resize(N);
        for (int j = 0; j < N; ++j) {
          auto st = steer_detail::state_stats(res.trajectory, b.step, j);
          b.ref[j] = update_ball_reference(b.center, b.radius, st.mean, st.trace_theta);
        }
      }
      for (auto& b : current.ball_control) {
        b.ref.resize(N);
        for (int j = 0; j < N; ++j) {
          auto st = steer_detail::control_stats(res.trajectory, b.step, j);
          b.ref[j] = update_ball_reference(b.center, b.radius, st.mean, st.trace_theta);
        }
      }
      // The guard needs the risk level the reference will actually face.
      const double gamma_next =
          (mi + 1 < schedule.gammas.size()) ? schedule.gammas[mi + 1] : 1.0;
      for (auto& h : current.half_state) {
        h.ref.resize(N);
        const double eps_next = std::min(gamma_next * h.eps, 1.0);
        for (int j = 0; j < N; ++j)
          h.ref[j] = steer_detail::guarded_half_reference(
              steer_detail::state_stats(res.trajectory, h.step, j), h.normal,
              h.offset, eps_next);
      }
      for (auto& h : current.half_control) {
        h.ref.resize(N);
        const double eps_next = std::min(gamma_next * h.eps, 1.0);
        for (int j = 0; j < N; ++j)
          h.ref[j] = steer_detail::guarded_half_reference(
              steer_detail::control_stats(res.trajectory, h.step, j), h.normal,
              h.offset, eps_next);
      }
      out.solution = std::move(res);
      out.last_optimal_m = rec.m;
      out.final_iteration_optimal = true;
    } else {
      out.final_iteration_optimal = false;
    }
    out.iterations.push_back(std::move(rec));
  }

  if (out.last_optimal_m < 0)
    throw NoFeasibleIterate(
        "steer: no iteration produced an optimal solution (last status: " +
        std::string(solve_status_name(out.iterations.back().status)) + ")");
  out.policy = extract(out.solution.trajectory);
  if (!chance.empty() && std::abs(schedule.gammas.back() - 1.0) > 1e-12)
    out.warning = "final schedule scale is " + std::to_string(schedule.gammas.back()) +
                  ", not 1; the nominal risk levels were never fully enforced";
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts: cost_history.csv plus one references_<m>.json per iteration.

namespace steer_detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

inline nlohmann::json vec_json(const Vec& v) {
  nlohmann::json a = nlohmann::json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline nlohmann::json refs_json(const std::vector<Vec>& refs) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& r : refs) a.push_back(vec_json(r));
  return a;
}

}  // namespace steer_detail

inline void write_steer_artifacts(const SteerResult& result,
                                  const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  {
    std::ofstream out(fs::path(dir) / "cost_history.csv", std::ios::binary);
    if (!out) throw ConfigError("cannot open " + dir + "/cost_history.csv");
    out << "m,gamma,eps_state,eps_control,status,objective\n";
    for (const auto& rec : result.iterations) {
      const auto& sp = rec.spec_used;
      std::string eps_x, eps_u;
      if (!sp.ball_state.empty()) eps_x = steer_detail::fmt(sp.ball_state[0].eps);
      else if (!sp.half_state.empty()) eps_x = steer_detail::fmt(sp.half_state[0].eps);
      if (!sp.ball_control.empty()) eps_u = steer_detail::fmt(sp.ball_control[0].eps);
      else if (!sp.half_control.empty()) eps_u = steer_detail::fmt(sp.half_control[0].eps);
      out << rec.m << "," << steer_detail::fmt(rec.gamma) << "," << eps_x << ","
          << eps_u << "," << solve_status_name(rec.status) << ","
          << (rec.status == SolveResult::Status::optimal
                  ? steer_detail::fmt(rec.objective)
                  : std::string())
          << "\n";
    }
  }

  for (const auto& rec : result.iterations) {
    nlohmann::json j;
    j["m"] = rec.m;
    j["gamma"] = rec.gamma;
    j["status"] = solve_status_name(rec.status);
    if (rec.status == SolveResult::Status::optimal) j["objective"] = rec.objective;
    auto ball_json = [&](const BallConstraint& b) {
      nlohmann::json e;
      e["step"] = b.step;
      e["center"] = steer_detail::vec_json(b.center);
      e["radius"] = b.radius;
      e["eps"] = b.eps;
      e["ref"] = steer_detail::refs_json(b.ref);
      return e;
    };
    auto half_json = [&](const HalfspaceConstraint& h) {
      nlohmann::json e;
      e["step"] = h.step;
      e["normal"] = steer_detail::vec_json(h.normal);
      e["offset"] = h.offset;
      e["eps"] = h.eps;
      e["ref"] = steer_detail::refs_json(h.ref);
      return e;
    };
    j["ball_state"] = nlohmann::json::array();
    for (const auto& b : rec.spec_used.ball_state) j["ball_state"].push_back(ball_json(b));
    j["ball_control"] = nlohmann::json::array();
    for (const auto& b : rec.spec_used.ball_control) j["ball_control"].push_back(ball_json(b));
    j["half_state"] = nlohmann::json::array();
    for (const auto& h : rec.spec_used.half_state) j["half_state"].push_back(half_json(h));
    j["half_control"] = nlohmann::json::array();
    for (const auto& h : rec.spec_used.half_control) j["half_control"].push_back(half_json(h));
    std::ofstream out(fs::path(dir) / ("references_" + std::to_string(rec.m) + ".json"),
                      std::ios::binary);
    if (!out) throw ConfigError("cannot open references json in " + dir);
    out << j.dump(2) << "\n";
  }
}

}  // namespace mjls
