#pragma once

#include <cstdlib>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mjls/chance.hpp"
#include "mjls/conic.hpp"
#include "mjls/ipm.hpp"
#include "mjls/moments.hpp"

namespace mjls {

// Conic program for the moment-steering problem plus the metadata needed to
// map solver output back onto a MomentTrajectory.
struct AssembledProgram {
  ConicProgram program;
  int T = 0, n_modes = 0, n_x = 0, n_u = 0;
  TerminalKind terminal = TerminalKind::unconditional_equality;
  std::vector<std::vector<int>> I_blk;  // [k][j] block index, k = 0..T
  std::vector<std::vector<int>> U_blk;  // [k][j], k = 0..T-1
  std::vector<std::vector<int>> Y_blk;
  std::vector<int> slack_blk;  // terminal slack blocks (upper-bound kinds)
  std::vector<Vec> rho;
};

struct AssembleOptions {
  // Emit the standalone I/Y cone memberships in addition to the stacked
  // [[I, U'], [U, Y]] block (they are implied by it; kept for fidelity to
  // the relaxation as written, and droppable to test that redundancy).
  bool standalone_psd = true;
  std::optional<TerminalKind> terminal_override;
};

namespace detail {

// Linear coefficient rows of the one-step propagation map, obtained by
// probing propagation_term() with svec/entry basis matrices. For source
// mode i at step k this yields, for every output svec component, the
// coefficients against svec(I_k(i)), vec(U_k(i)) and svec(Y_k(i)).
struct PropagationProbe {
  Mat on_I;  // svec(nl) x svec(nl): column b = svec(Phi(B_b, 0, 0) - const)
  Mat on_U;  // svec(nl) x (nu*nl)
  Mat on_Y;  // svec(nl) x svec(nu)
  Vec constant;  // svec(D~ D~')
};

inline PropagationProbe probe_propagation(const LiftedMatrices& L, int k,
                                          int i, int n_x, int n_u) {
  const int nl = n_x + 1;
  const int snl = svec_size(nl), snu = svec_size(n_u), nun = n_u * nl;
  PropagationProbe pr;
  const Mat Z_I = Mat::Zero(nl, nl);
  const Mat Z_U = Mat::Zero(n_u, nl);
  const Mat Z_Y = Mat::Zero(n_u, n_u);
  pr.constant = svec(symmetrize(L.D[k][i] * L.D[k][i].transpose()));
  pr.on_I = Mat(snl, snl);
  for (int b = 0; b < snl; ++b) {
    Vec e = Vec::Zero(snl);
    e(b) = 1.0;
    pr.on_I.col(b) = svec(symmetrize(
        propagation_term(L, k, i, smat(e, nl), Z_U, Z_Y, false)));
  }
  pr.on_U = Mat(snl, nun);
  for (int b = 0; b < nun; ++b) {
    Mat U = Z_U;
    U(b % n_u, b / n_u) = 1.0;
    pr.on_U.col(b) =
        svec(symmetrize(propagation_term(L, k, i, Z_I, U, Z_Y, false)));
  }
  pr.on_Y = Mat(snl, snu);
  for (int b = 0; b < snu; ++b) {
    Vec e = Vec::Zero(snu);
    e(b) = 1.0;
    pr.on_Y.col(b) = svec(symmetrize(
        propagation_term(L, k, i, Z_I, Z_U, smat(e, n_u), false)));
  }
  return pr;
}

inline void push_coef(LinearRow& row, int idx, double v) {
  if (v != 0.0) row.coef.emplace_back(idx, v);
}

}  // namespace detail

// Build the lifted-moment semidefinite program:
//   variables   I_bar_k(j) (sym), U_bar_k(j) (rect), Y_bar_k(j) (sym)
//   objective   sum_k sum_j rho_k(j) [tr(Q~ I) + tr(R Y)]
//   equalities  initial moments, one-step propagation, terminal condition,
//               bottom-right pins I_k(j)[nx,nx] = 1
//   cones       stacked [[I, U'],[U, Y]] >= 0 per (k<T, j); standalone
//               I >= 0 / Y >= 0; terminal slack blocks for upper bounds
//   inequalities  trace rows from the chance surrogates.
// The bottom-right svec component of the initial/propagation/terminal rows
// is omitted: it is an exact linear combination of the pins, and the pins
// carry it. Every row is scaled to unit infinity norm.
inline AssembledProgram assemble(const MjlsModel& model,
                                 const BoundarySpec& boundary,
                                 const std::vector<TraceConstraint>& chance_rows,
                                 const AssembleOptions& opts = {}) {
  AssembledProgram ap;
  const int T = model.horizon, N = model.n_modes;
  const int nx = model.n_x, nu = model.n_u, nl = nx + 1;
  const int snl = svec_size(nl), snu = svec_size(nu);
  const int br = svec_index(nx, nx);  // bottom-right diagonal svec component
  ap.T = T;
  ap.n_modes = N;
  ap.n_x = nx;
  ap.n_u = nu;
  ap.terminal = opts.terminal_override.value_or(boundary.kind);
  ap.rho = mode_priors(model);
  const std::vector<Mat> s_bwd = backward_transitions(model);
  const LiftedMatrices L = lift(model);
  ConicProgram& P = ap.program;

  // Variable blocks.
  ap.I_blk.assign(T + 1, std::vector<int>(N));
  ap.U_blk.assign(T, std::vector<int>(N));
  ap.Y_blk.assign(T, std::vector<int>(N));
  for (int k = 0; k <= T; ++k)
    for (int j = 0; j < N; ++j) {
      ap.I_blk[k][j] = P.add_sym_block(
          nl, "I[" + std::to_string(k) + "][" + std::to_string(j) + "]");
      if (k < T) {
        ap.U_blk[k][j] = P.add_rect_block(
            nu, nl, "U[" + std::to_string(k) + "][" + std::to_string(j) + "]");
        ap.Y_blk[k][j] = P.add_sym_block(
            nu, "Y[" + std::to_string(k) + "][" + std::to_string(j) + "]");
      }
    }
  const int n_targets = terminal_is_modewise(ap.terminal) ? N : 1;
  if (terminal_is_upper_bound(ap.terminal))
    for (int t = 0; t < n_targets; ++t)
      ap.slack_blk.push_back(
          P.add_sym_block(nx, "terminal_slack[" + std::to_string(t) + "]"));

  // Objective.
  P.c = Vec::Zero(P.num_vars);
  for (int k = 0; k < T; ++k)
    for (int j = 0; j < N; ++j) {
      const double w = ap.rho[k][j];
      P.c.segment(P.blocks[ap.I_blk[k][j]].offset, snl) +=
          w * svec(symmetrize(L.Q[k][j]));
      P.c.segment(P.blocks[ap.Y_blk[k][j]].offset, snu) +=
          w * svec(symmetrize(model.R[k][j]));
    }

  // Initial conditions (all svec components but the pinned bottom-right).
  for (int j = 0; j < N; ++j) {
    const Vec tgt = svec(embed(boundary.mu_in[j], boundary.Sigma_in[j]));
    for (int idx = 0; idx < snl; ++idx) {
      if (idx == br) continue;
      LinearRow row;
      row.group = RowGroup::initial;
      row.id = "initial[j=" + std::to_string(j) + "][" + std::to_string(idx) + "]";
      detail::push_coef(row, P.blocks[ap.I_blk[0][j]].offset + idx, 1.0);
      row.rhs = tgt(idx);
      P.equalities.push_back(std::move(row));
    }
  }

  // Bottom-right pins for every (k, j).
  for (int k = 0; k <= T; ++k)
    for (int j = 0; j < N; ++j) {
      LinearRow row;
      row.group = RowGroup::pin;
      row.id = "pin[k=" + std::to_string(k) + "][j=" + std::to_string(j) + "]";
      detail::push_coef(row, P.blocks[ap.I_blk[k][j]].offset + br, 1.0);
      row.rhs = 1.0;
      P.equalities.push_back(std::move(row));
    }

  // One-step propagation rows.
  for (int k = 0; k < T; ++k) {
    std::vector<detail::PropagationProbe> probes;
    for (int i = 0; i < N; ++i)
      probes.push_back(detail::probe_propagation(L, k, i, nx, nu));
    for (int j = 0; j < N; ++j) {
      for (int idx = 0; idx < snl; ++idx) {
        if (idx == br) continue;
        LinearRow row;
        row.group = RowGroup::propagation;
        row.id = "prop[k=" + std::to_string(k + 1) + "][j=" +
                 std::to_string(j) + "][" + std::to_string(idx) + "]";
        detail::push_coef(row, P.blocks[ap.I_blk[k + 1][j]].offset + idx, 1.0);
        double rhs = 0.0;
        for (int i = 0; i < N; ++i) {
          const double w = s_bwd[k](i, j);
          const auto& pr = probes[i];
          const int offI = P.blocks[ap.I_blk[k][i]].offset;
          const int offU = P.blocks[ap.U_blk[k][i]].offset;
          const int offY = P.blocks[ap.Y_blk[k][i]].offset;
          for (int b = 0; b < snl; ++b)
            detail::push_coef(row, offI + b, -w * pr.on_I(idx, b));
          for (int b = 0; b < nu * nl; ++b)
            detail::push_coef(row, offU + b, -w * pr.on_U(idx, b));
          for (int b = 0; b < snu; ++b)
            detail::push_coef(row, offY + b, -w * pr.on_Y(idx, b));
          rhs += w * pr.constant(idx);
        }
        row.rhs = rhs;
        P.equalities.push_back(std::move(row));
      }
    }
  }

  // Terminal condition.
  const Vec& rhoT = ap.rho[T];
  auto add_equality_target = [&](int target_idx, bool modewise) {
    const Vec tgt = svec(
        embed(boundary.mu_out[target_idx], boundary.Sigma_out[target_idx]));
    for (int idx = 0; idx < snl; ++idx) {
      if (idx == br) continue;
      LinearRow row;
      row.group = RowGroup::terminal;
      row.id = "terminal[" + std::to_string(target_idx) + "][" +
               std::to_string(idx) + "]";
      if (modewise) {
        detail::push_coef(row, P.blocks[ap.I_blk[T][target_idx]].offset + idx,
                          1.0);
      } else {
        for (int j = 0; j < N; ++j)
          detail::push_coef(row, P.blocks[ap.I_blk[T][j]].offset + idx,
                            rhoT[j]);
      }
      row.rhs = tgt(idx);
      P.equalities.push_back(std::move(row));
    }
  };
  auto add_upper_bound_target = [&](int target_idx, bool modewise) {
    static const double rt2 = std::sqrt(2.0);
    const Vec& mu = boundary.mu_out[target_idx];
    const Mat Iout = boundary.Sigma_out[target_idx] + mu * mu.transpose();
    // Mean column equality.
    for (int r = 0; r < nx; ++r) {
      LinearRow row;
      row.group = RowGroup::terminal;
      row.id = "terminal_mean[" + std::to_string(target_idx) + "][" +
               std::to_string(r) + "]";
      const int idx = svec_index(r, nx);
      if (modewise)
        detail::push_coef(row, P.blocks[ap.I_blk[T][target_idx]].offset + idx,
                          1.0);
      else
        for (int j = 0; j < N; ++j)
          detail::push_coef(row, P.blocks[ap.I_blk[T][j]].offset + idx,
                            rhoT[j]);
      row.rhs = rt2 * mu(r);  // svec scaling of an off-diagonal component
      P.equalities.push_back(std::move(row));
    }
    // Top-left block + PSD slack = target second moment.
    const int slack = ap.slack_blk[target_idx];
    for (int cc = 0; cc < nx; ++cc)
      for (int rr = 0; rr <= cc; ++rr) {
        LinearRow row;
        row.group = RowGroup::terminal;
        row.id = "terminal_cov[" + std::to_string(target_idx) + "][" +
                 std::to_string(rr) + "," + std::to_string(cc) + "]";
        const int idx = svec_index(rr, cc);
        if (modewise)
          detail::push_coef(row,
                            P.blocks[ap.I_blk[T][target_idx]].offset + idx,
                            1.0);
        else
          for (int j = 0; j < N; ++j)
            detail::push_coef(row, P.blocks[ap.I_blk[T][j]].offset + idx,
                              rhoT[j]);
        detail::push_coef(
            row, P.blocks[slack].offset + svec_index(rr, cc), 1.0);
        row.rhs = (rr == cc) ? Iout(rr, cc) : rt2 * Iout(rr, cc);
        P.equalities.push_back(std::move(row));
      }
  };
  switch (ap.terminal) {
    case TerminalKind::unconditional_equality:
      add_equality_target(0, false);
      break;
    case TerminalKind::modewise_equality:
      for (int j = 0; j < N; ++j) add_equality_target(j, true);
      break;
    case TerminalKind::unconditional_upper_bound:
      add_upper_bound_target(0, false);
      break;
    case TerminalKind::modewise_upper_bound:
      for (int j = 0; j < N; ++j) add_upper_bound_target(j, true);
      break;
  }

  // Chance surrogate rows.
  for (const TraceConstraint& tc : chance_rows) {
    LinearRow row;
    row.group = RowGroup::chance;
    row.id = tc.id;
    row.rhs = tc.rhs;
    if (tc.kind == TraceConstraint::Kind::state) {
      for (int j = 0; j < N; ++j) {
        const Vec e = svec(symmetrize(tc.E[j]));
        const int off = P.blocks[ap.I_blk[tc.step][j]].offset;
        for (int idx = 0; idx < snl; ++idx)
          detail::push_coef(row, off + idx, e(idx));
      }
    } else {
      for (int j = 0; j < N; ++j) {
        const Vec fv = svec(symmetrize(tc.F[j]));
        const int offY = P.blocks[ap.Y_blk[tc.step][j]].offset;
        for (int idx = 0; idx < snu; ++idx)
          detail::push_coef(row, offY + idx, fv(idx));
        const int offU = P.blocks[ap.U_blk[tc.step][j]].offset;
        for (int a = 0; a < nl; ++a)
          for (int b2 = 0; b2 < nu; ++b2)
            detail::push_coef(row, offU + b2 + a * nu, tc.G[j](a, b2));
      }
    }
    P.inequalities.push_back(std::move(row));
  }

  // Cone memberships.
  static const double rt2 = std::sqrt(2.0);
  auto add_identity_membership = [&](int blk, const std::string& name) {
    const VarBlock& vb = P.blocks[blk];
    PsdMembership mem;
    mem.dim = vb.rows;
    mem.name = name;
    mem.constant = Vec::Zero(svec_size(vb.rows));
    mem.P = Mat::Identity(vb.span, vb.span);
    for (int i = 0; i < vb.span; ++i) mem.cols.push_back(vb.offset + i);
    P.memberships.push_back(std::move(mem));
  };
  for (int k = 0; k < T; ++k)
    for (int j = 0; j < N; ++j) {
      // Stacked decision block [[I, U'], [U, Y]] over (x;1, u).
      PsdMembership mem;
      const int d = nl + nu;
      mem.dim = d;
      mem.name = "stacked[" + std::to_string(k) + "][" + std::to_string(j) + "]";
      const VarBlock& vI = P.blocks[ap.I_blk[k][j]];
      const VarBlock& vU = P.blocks[ap.U_blk[k][j]];
      const VarBlock& vY = P.blocks[ap.Y_blk[k][j]];
      for (int i = 0; i < vI.span; ++i) mem.cols.push_back(vI.offset + i);
      for (int i = 0; i < vU.span; ++i) mem.cols.push_back(vU.offset + i);
      for (int i = 0; i < vY.span; ++i) mem.cols.push_back(vY.offset + i);
      mem.constant = Vec::Zero(svec_size(d));
      mem.P = Mat::Zero(svec_size(d), vI.span + vU.span + vY.span);
      for (int cc = 0; cc < nl; ++cc)  // I block
        for (int rr = 0; rr <= cc; ++rr)
          mem.P(svec_index(rr, cc), svec_index(rr, cc)) = 1.0;
      for (int cc = 0; cc < nl; ++cc)  // U block: M(nl+a, cc) = U(a, cc)
        for (int a = 0; a < nu; ++a)
          mem.P(svec_index(cc, nl + a), vI.span + a + cc * nu) = rt2;
      for (int cc = 0; cc < nu; ++cc)  // Y block
        for (int rr = 0; rr <= cc; ++rr)
          mem.P(svec_index(nl + rr, nl + cc),
                vI.span + vU.span + svec_index(rr, cc)) = 1.0;
      P.memberships.push_back(std::move(mem));
      if (opts.standalone_psd) {
        add_identity_membership(ap.I_blk[k][j],
                                "I_psd[" + std::to_string(k) + "][" +
                                    std::to_string(j) + "]");
        add_identity_membership(ap.Y_blk[k][j],
                                "Y_psd[" + std::to_string(k) + "][" +
                                    std::to_string(j) + "]");
      }
    }
  for (int j = 0; j < N; ++j)
    add_identity_membership(ap.I_blk[T][j],
                            "I_psd[" + std::to_string(T) + "][" +
                                std::to_string(j) + "]");
  for (size_t t = 0; t < ap.slack_blk.size(); ++t)
    add_identity_membership(ap.slack_blk[t],
                            "terminal_slack_psd[" + std::to_string(t) + "]");

  for (LinearRow& row : P.equalities) scale_row_unit_inf(row);
  for (LinearRow& row : P.inequalities) scale_row_unit_inf(row);
  return ap;
}

// ---------------------------------------------------------------------------

struct SolveResult {
  enum class Status { optimal, infeasible, numerical_failure };
  Status status = Status::numerical_failure;
  MomentTrajectory trajectory;  // populated when optimal
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  std::string backend;
  std::string message;
  // Post-solve diagnostics: worst scaled equality residual per row group,
  // worst positive chance-row violation, most negative cone eigenvalue.
  std::map<std::string, double> equality_residuals;
  double chance_violation = 0.0;
  double min_psd_eig = 0.0;
};

inline const char* solve_status_name(SolveResult::Status s) {
  switch (s) {
    case SolveResult::Status::optimal: return "optimal";
    case SolveResult::Status::infeasible: return "infeasible";
    case SolveResult::Status::numerical_failure: return "numerical_failure";
  }
  return "?";
}

// Registry of conic backends, selectable through MJLS_BACKEND. Only the
// built-in interior-point method ships, but the seam is the contract.
inline const SolverBackend& backend_by_name(const std::string& name) {
  static InteriorPointBackend ipm_backend;
  if (name.empty() || name == "ipm") return ipm_backend;
  throw BackendFailure("unknown conic backend '" + name +
                       "' (available: ipm)");
}

inline const SolverBackend& default_backend() {
  const char* env = std::getenv("MJLS_BACKEND");
  return backend_by_name(env ? env : "");
}

// Solve an assembled program and map the result back to moment blocks.
// Invariants on an optimal result: every scaled equality residual <= 1e-6
// and every cone block eigenvalue >= -1e-7 (else numerical_failure).
inline SolveResult solve(const AssembledProgram& ap,
                         const SolverBackend& backend = default_backend()) {
  SolveResult res;
  res.backend = backend.name();
  ConicSolution cs = backend.solve(ap.program);
  res.iterations = cs.iterations;
  res.message = cs.message;
  if (cs.status == ConicStatus::primal_infeasible) {
    res.status = SolveResult::Status::infeasible;
    return res;
  }
  if (cs.status != ConicStatus::optimal) {
    res.status = SolveResult::Status::numerical_failure;
    return res;
  }

  const ConicProgram& P = ap.program;
  res.objective = cs.objective;
  res.trajectory.I_bar.assign(ap.T + 1, {});
  res.trajectory.U_bar.assign(ap.T, {});
  res.trajectory.Y_bar.assign(ap.T, {});
  // Map the solution back block by block, projecting each stacked block
  // onto the cone it belongs to. The backend guarantees eigenvalues no worse
  // than its tolerance floor; the projection removes that numerical dust so
  // policy extraction sees an exactly realizable moment sequence.
  const int nl = ap.n_x + 1;
  for (int k = 0; k <= ap.T; ++k)
    for (int j = 0; j < ap.n_modes; ++j) {
      if (k < ap.T) {
        Mat M(nl + ap.n_u, nl + ap.n_u);
        M.topLeftCorner(nl, nl) = P.get_block(cs.x, ap.I_blk[k][j]);
        M.bottomLeftCorner(ap.n_u, nl) = P.get_block(cs.x, ap.U_blk[k][j]);
        M.topRightCorner(nl, ap.n_u) =
            M.bottomLeftCorner(ap.n_u, nl).transpose();
        M.bottomRightCorner(ap.n_u, ap.n_u) =
            P.get_block(cs.x, ap.Y_blk[k][j]);
        M = psd_project(M);
        res.trajectory.I_bar[k].push_back(M.topLeftCorner(nl, nl));
        res.trajectory.U_bar[k].push_back(M.bottomLeftCorner(ap.n_u, nl));
        res.trajectory.Y_bar[k].push_back(M.bottomRightCorner(ap.n_u, ap.n_u));
      } else {
        res.trajectory.I_bar[k].push_back(
            psd_project(P.get_block(cs.x, ap.I_blk[k][j])));
      }
    }

  for (const LinearRow& row : P.equalities) {
    const double r = std::abs(P.eval_row(row, cs.x) - row.rhs);
    auto& slot = res.equality_residuals[row_group_name(row.group)];
    slot = std::max(slot, r);
  }
  for (const LinearRow& row : P.inequalities)
    res.chance_violation =
        std::max(res.chance_violation, P.eval_row(row, cs.x) - row.rhs);
  res.min_psd_eig = 0.0;
  for (const PsdMembership& mem : P.memberships)
    res.min_psd_eig =
        std::min(res.min_psd_eig, min_eigenvalue(P.eval_membership(mem, cs.x)));

  double worst_eq = 0.0;
  for (const auto& [g, r] : res.equality_residuals)
    worst_eq = std::max(worst_eq, r);
  if (worst_eq > 1e-6 || res.min_psd_eig < -1e-7 ||
      res.chance_violation > 1e-6) {
    res.status = SolveResult::Status::numerical_failure;
    res.message = "solution failed post-checks (max equality residual " +
                  std::to_string(worst_eq) + ", min cone eigenvalue " +
                  std::to_string(res.min_psd_eig) + ")";
    return res;
  }
  res.status = SolveResult::Status::optimal;
  return res;
}

}  // namespace mjls
