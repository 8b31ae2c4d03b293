#pragma once

#include <string>
#include <vector>

#include "mjls/linalg.hpp"

namespace mjls {

enum class NoiseFamily { gaussian, rademacher };

// Discrete-time Markov jump linear system with multiplicative state and
// control noise:
//
//   x_{k+1} = A_k(q) x_k + B_k(q) u_k
//           + sum_r A_k^(r)(q) x_k xi_k^(r) + sum_s B_k^(s)(q) u_k eta_k^(s)
//           + D_k(q) w_k,
//
// where q = q_k follows a (time-varying) Markov chain on {0, ..., n_modes-1}
// and xi, eta, w are zero-mean unit-variance mutually independent scalars /
// vectors, independent of the chain.
//
// Matrix sequences are stored fully expanded: outer index k in [0, horizon),
// inner index j over modes. Multiplicative channels add a third index
// (r in [0, m_x) for A_mult, s in [0, m_u) for B_mult).
struct MjlsModel {
  int horizon = 0;  // number of transition steps T; states live on 0..T
  int n_modes = 0;
  int n_x = 0, n_u = 0, n_w = 0;
  int m_x = 0, m_u = 0;
  NoiseFamily noise_family = NoiseFamily::gaussian;

  std::vector<std::vector<Mat>> A, B, D;  // [k][j]
  std::vector<std::vector<std::vector<Mat>>> A_mult, B_mult;  // [k][j][r]
  std::vector<std::vector<Mat>> Q, R;  // stage cost weights, [k][j]
  std::vector<Mat> P;                  // P[k](i,j) = Pr(q_{k+1}=j | q_k=i)
  Vec rho0;                            // initial mode distribution
};

enum class TerminalKind {
  unconditional_equality,
  unconditional_upper_bound,
  modewise_equality,
  modewise_upper_bound,
};

inline bool terminal_is_modewise(TerminalKind k) {
  return k == TerminalKind::modewise_equality ||
         k == TerminalKind::modewise_upper_bound;
}

inline bool terminal_is_upper_bound(TerminalKind k) {
  return k == TerminalKind::unconditional_upper_bound ||
         k == TerminalKind::modewise_upper_bound;
}

inline const char* terminal_kind_name(TerminalKind k) {
  switch (k) {
    case TerminalKind::unconditional_equality: return "unconditional_equality";
    case TerminalKind::unconditional_upper_bound: return "unconditional_upper_bound";
    case TerminalKind::modewise_equality: return "modewise_equality";
    case TerminalKind::modewise_upper_bound: return "modewise_upper_bound";
  }
  return "?";
}

// Initial mode-conditional moments and the terminal moment requirement.
// mu_out/Sigma_out have one entry for the unconditional kinds and n_modes
// entries for the modewise kinds.
struct BoundarySpec {
  std::vector<Vec> mu_in;     // per mode
  std::vector<Mat> Sigma_in;  // per mode
  TerminalKind kind = TerminalKind::unconditional_equality;
  std::vector<Vec> mu_out;
  std::vector<Mat> Sigma_out;
};

// Lifted representation over the augmented state (x; 1): the extra
// coordinate turns affine dynamics and mean tracking into linear algebra on
// one second-moment matrix per (step, mode).
struct LiftedMatrices {
  std::vector<std::vector<Mat>> A, B, D, Q;  // [k][j]
  std::vector<std::vector<std::vector<Mat>>> A_mult, B_mult;  // [k][j][r]
};

struct ValidationReport {
  std::vector<std::string> problems;
  bool ok() const { return problems.empty(); }
};

namespace detail {

inline void check_dims(const MjlsModel& m, ValidationReport& rep) {
  auto bad = [&](const std::string& what) { rep.problems.push_back(what); };
  auto dim_of = [](const Mat& x) {
    return std::to_string(x.rows()) + "x" + std::to_string(x.cols());
  };
  auto check_seq = [&](const std::vector<std::vector<Mat>>& seq,
                       const std::string& name, int rows, int cols) {
    if (static_cast<int>(seq.size()) != m.horizon) {
      bad(name + ": expected " + std::to_string(m.horizon) + " steps, got " +
          std::to_string(seq.size()));
      return;
    }
    for (int k = 0; k < m.horizon; ++k) {
      if (static_cast<int>(seq[k].size()) != m.n_modes) {
        bad(name + "[" + std::to_string(k) + "]: expected " +
            std::to_string(m.n_modes) + " modes");
        continue;
      }
      for (int j = 0; j < m.n_modes; ++j)
        if (seq[k][j].rows() != rows || seq[k][j].cols() != cols)
          bad(name + "[" + std::to_string(k) + "][" + std::to_string(j) +
              "]: expected " + std::to_string(rows) + "x" +
              std::to_string(cols) + ", got " + dim_of(seq[k][j]));
    }
  };
  auto check_mult = [&](const std::vector<std::vector<std::vector<Mat>>>& seq,
                        const std::string& name, int channels, int rows,
                        int cols) {
    if (static_cast<int>(seq.size()) != m.horizon) {
      bad(name + ": expected " + std::to_string(m.horizon) + " steps, got " +
          std::to_string(seq.size()));
      return;
    }
    for (int k = 0; k < m.horizon; ++k) {
      if (static_cast<int>(seq[k].size()) != m.n_modes) {
        bad(name + "[" + std::to_string(k) + "]: expected " +
            std::to_string(m.n_modes) + " modes");
        continue;
      }
      for (int j = 0; j < m.n_modes; ++j) {
        if (static_cast<int>(seq[k][j].size()) != channels) {
          bad(name + "[" + std::to_string(k) + "][" + std::to_string(j) +
              "]: expected " + std::to_string(channels) + " channels");
          continue;
        }
        for (int r = 0; r < channels; ++r)
          if (seq[k][j][r].rows() != rows || seq[k][j][r].cols() != cols)
            bad(name + "[" + std::to_string(k) + "][" + std::to_string(j) +
                "][" + std::to_string(r) + "]: expected " +
                std::to_string(rows) + "x" + std::to_string(cols));
      }
    }
  };

  if (m.horizon < 1) bad("horizon must be >= 1");
  if (m.n_modes < 1) bad("n_modes must be >= 1");
  if (m.n_x < 1 || m.n_u < 1 || m.n_w < 1) bad("n_x, n_u, n_w must be >= 1");
  if (m.m_x < 0 || m.m_u < 0) bad("m_x, m_u must be >= 0");
  if (!rep.problems.empty()) return;  // sizes below depend on these

  check_seq(m.A, "A", m.n_x, m.n_x);
  check_seq(m.B, "B", m.n_x, m.n_u);
  check_seq(m.D, "D", m.n_x, m.n_w);
  check_seq(m.Q, "Q", m.n_x, m.n_x);
  check_seq(m.R, "R", m.n_u, m.n_u);
  check_mult(m.A_mult, "A_mult", m.m_x, m.n_x, m.n_x);
  check_mult(m.B_mult, "B_mult", m.m_u, m.n_x, m.n_u);

  if (static_cast<int>(m.P.size()) != m.horizon)
    bad("P: expected " + std::to_string(m.horizon) + " steps");
  else
    for (int k = 0; k < m.horizon; ++k)
      if (m.P[k].rows() != m.n_modes || m.P[k].cols() != m.n_modes)
        bad("P[" + std::to_string(k) + "]: expected " +
            std::to_string(m.n_modes) + "x" + std::to_string(m.n_modes));
  if (m.rho0.size() != m.n_modes) bad("rho0: wrong length");
}

}  // namespace detail

// Mode occupancy probabilities rho[k], k = 0..horizon, propagated through the
// chain. Throws DegenerateChain if any prior falls to (numerical) zero: the
// mode-conditional moment recursion divides by these.
inline std::vector<Vec> mode_priors(const MjlsModel& m) {
  constexpr double kTiny = 1e-12;
  std::vector<Vec> rho(m.horizon + 1);
  rho[0] = m.rho0;
  for (int k = 0; k < m.horizon; ++k) rho[k + 1] = m.P[k].transpose() * rho[k];
  for (int k = 0; k <= m.horizon; ++k)
    for (int j = 0; j < m.n_modes; ++j)
      if (!(rho[k][j] > kTiny))
        throw DegenerateChain("mode prior rho_" + std::to_string(k) + "(" +
                              std::to_string(j) + ") = " +
                              std::to_string(rho[k][j]) + " is not positive");
  return rho;
}

// Backward transition weights s[k](i,j) = Pr(q_k=i | q_{k+1}=j)
//                                       = P[k](i,j) rho_k(i) / rho_{k+1}(j).
// Columns sum to one. These weight the per-source-mode propagation terms.
inline std::vector<Mat> backward_transitions(const MjlsModel& m) {
  const std::vector<Vec> rho = mode_priors(m);
  std::vector<Mat> s(m.horizon);
  for (int k = 0; k < m.horizon; ++k) {
    s[k] = Mat(m.n_modes, m.n_modes);
    for (int i = 0; i < m.n_modes; ++i)
      for (int j = 0; j < m.n_modes; ++j)
        s[k](i, j) = m.P[k](i, j) * rho[k][i] / rho[k + 1][j];
  }
  return s;
}

// Lift every system matrix to the augmented state (x; 1):
//   A~ = [A 0; 0 1], B~ = [B; 0], A~^(r) = [A^(r) 0; 0 0], B~^(s) = [B^(s); 0],
//   D~ = [D; 0], Q~ = [Q 0; 0 0].
inline LiftedMatrices lift(const MjlsModel& m) {
  LiftedMatrices L;
  const int nx = m.n_x, nu = m.n_u, nw = m.n_w, nl = m.n_x + 1;
  L.A.assign(m.horizon, {});
  L.B.assign(m.horizon, {});
  L.D.assign(m.horizon, {});
  L.Q.assign(m.horizon, {});
  L.A_mult.assign(m.horizon, {});
  L.B_mult.assign(m.horizon, {});
  for (int k = 0; k < m.horizon; ++k) {
    for (int j = 0; j < m.n_modes; ++j) {
      Mat At = Mat::Zero(nl, nl);
      At.topLeftCorner(nx, nx) = m.A[k][j];
      At(nx, nx) = 1.0;
      L.A[k].push_back(At);

      Mat Bt = Mat::Zero(nl, nu);
      Bt.topRows(nx) = m.B[k][j];
      L.B[k].push_back(Bt);

      Mat Dt = Mat::Zero(nl, nw);
      Dt.topRows(nx) = m.D[k][j];
      L.D[k].push_back(Dt);

      Mat Qt = Mat::Zero(nl, nl);
      Qt.topLeftCorner(nx, nx) = m.Q[k][j];
      L.Q[k].push_back(Qt);

      std::vector<Mat> Am, Bm;
      for (int r = 0; r < m.m_x; ++r) {
        Mat M = Mat::Zero(nl, nl);
        M.topLeftCorner(nx, nx) = m.A_mult[k][j][r];
        Am.push_back(M);
      }
      for (int s = 0; s < m.m_u; ++s) {
        Mat M = Mat::Zero(nl, nu);
        M.topRows(nx) = m.B_mult[k][j][s];
        Bm.push_back(M);
      }
      L.A_mult[k].push_back(std::move(Am));
      L.B_mult[k].push_back(std::move(Bm));
    }
  }
  return L;
}

// Full structural + numerical validation of a model/boundary pair. Collects
// every problem found instead of stopping at the first.
inline ValidationReport validate(const MjlsModel& m, const BoundarySpec& b) {
  ValidationReport rep;
  detail::check_dims(m, rep);
  if (!rep.ok()) return rep;  // later checks assume consistent sizes

  constexpr double kSumTol = 1e-12;
  for (int k = 0; k < m.horizon; ++k)
    for (int i = 0; i < m.n_modes; ++i) {
      if (m.P[k].row(i).minCoeff() < 0.0)
        rep.problems.push_back("P[" + std::to_string(k) + "] row " +
                               std::to_string(i) + " has a negative entry");
      if (std::abs(m.P[k].row(i).sum() - 1.0) > kSumTol)
        rep.problems.push_back("P[" + std::to_string(k) + "] row " +
                               std::to_string(i) + " does not sum to 1");
    }
  if (m.rho0.size() == m.n_modes) {
    if (m.rho0.minCoeff() < 0.0)
      rep.problems.push_back("rho0 has a negative entry");
    if (std::abs(m.rho0.sum() - 1.0) > kSumTol)
      rep.problems.push_back("rho0 does not sum to 1");
  }
  if (rep.ok()) {
    try {
      mode_priors(m);
    } catch (const DegenerateChain& e) {
      rep.problems.push_back(e.what());
    }
  }

  for (int k = 0; k < m.horizon; ++k)
    for (int j = 0; j < m.n_modes; ++j) {
      if (min_eigenvalue(symmetrize(m.Q[k][j])) < -1e-10)
        rep.problems.push_back("Q[" + std::to_string(k) + "][" +
                               std::to_string(j) + "] is not PSD");
      if (min_eigenvalue(symmetrize(m.R[k][j])) < 1e-10)
        rep.problems.push_back("R[" + std::to_string(k) + "][" +
                               std::to_string(j) +
                               "] is not positive definite");
    }

  // Boundary data.
  if (static_cast<int>(b.mu_in.size()) != m.n_modes ||
      static_cast<int>(b.Sigma_in.size()) != m.n_modes) {
    rep.problems.push_back("boundary: mu_in/Sigma_in must have one entry per mode");
    return rep;
  }
  for (int j = 0; j < m.n_modes; ++j) {
    if (b.mu_in[j].size() != m.n_x)
      rep.problems.push_back("boundary: mu_in[" + std::to_string(j) +
                             "] has wrong length");
    if (b.Sigma_in[j].rows() != m.n_x || b.Sigma_in[j].cols() != m.n_x)
      rep.problems.push_back("boundary: Sigma_in[" + std::to_string(j) +
                             "] has wrong shape");
    else if (!is_psd(b.Sigma_in[j], 1e-10))
      rep.problems.push_back("boundary: Sigma_in[" + std::to_string(j) +
                             "] is not PSD");
  }
  const int want = terminal_is_modewise(b.kind) ? m.n_modes : 1;
  if (static_cast<int>(b.mu_out.size()) != want ||
      static_cast<int>(b.Sigma_out.size()) != want) {
    rep.problems.push_back(std::string("boundary: terminal kind ") +
                           terminal_kind_name(b.kind) + " needs " +
                           std::to_string(want) + " mu_out/Sigma_out entries");
    return rep;
  }
  for (int t = 0; t < want; ++t) {
    if (b.mu_out[t].size() != m.n_x)
      rep.problems.push_back("boundary: mu_out[" + std::to_string(t) +
                             "] has wrong length");
    if (b.Sigma_out[t].rows() != m.n_x || b.Sigma_out[t].cols() != m.n_x)
      rep.problems.push_back("boundary: Sigma_out[" + std::to_string(t) +
                             "] has wrong shape");
    else if (!is_psd(b.Sigma_out[t], 1e-10))
      rep.problems.push_back("boundary: Sigma_out[" + std::to_string(t) +
                             "] is not PSD");
  }
  return rep;
}

}  // namespace mjls
