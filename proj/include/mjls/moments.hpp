#pragma once

#include <utility>
#include <vector>

#include "mjls/model.hpp"

namespace mjls {

// Mode-conditional second-moment trajectory in lifted coordinates.
//   I_bar[k][j] = E[(x;1)(x;1)' | q_k = j]          (k = 0..T)
//   U_bar[k][j] = E[u (x;1)'    | q_k = j]          (k = 0..T-1)
//   Y_bar[k][j] = E[u u'        | q_k = j]          (k = 0..T-1)
struct MomentTrajectory {
  std::vector<std::vector<Mat>> I_bar;
  std::vector<std::vector<Mat>> U_bar;
  std::vector<std::vector<Mat>> Y_bar;
};

// Convenient unpacked view of one (step, mode) cell.
struct ModeMoments {
  Vec mu;          // E[x | q_k = j]
  Mat Sigma;       // Cov(x | q_k = j)
  double trace_I;  // tr E[x x' | q_k = j]
  Vec v;           // E[u | q_k = j]        (zero-sized at k = T)
  Mat Y;           // E[u u' | q_k = j]     (zero-sized at k = T)
};

// Pack (mu, Sigma) into the lifted second moment [[Sigma+mu mu', mu],[mu',1]].
inline Mat embed(const Vec& mu, const Mat& Sigma) {
  const int n = static_cast<int>(mu.size());
  if (Sigma.rows() != n || Sigma.cols() != n)
    throw DimensionMismatch("embed: Sigma shape does not match mu");
  Mat I = Mat::Zero(n + 1, n + 1);
  I.topLeftCorner(n, n) = Sigma + mu * mu.transpose();
  I.topRightCorner(n, 1) = mu;
  I.bottomLeftCorner(1, n) = mu.transpose();
  I(n, n) = 1.0;
  return I;
}

// Inverse of embed. Requires the bottom-right entry to equal 1 within 1e-8.
inline std::pair<Vec, Mat> extract(const Mat& I_tilde) {
  const int nl = static_cast<int>(I_tilde.rows());
  if (I_tilde.cols() != nl || nl < 2)
    throw MalformedLift("extract: matrix is not a lifted second moment");
  const int n = nl - 1;
  if (std::abs(I_tilde(n, n) - 1.0) > 1e-8)
    throw MalformedLift("extract: bottom-right entry " +
                        std::to_string(I_tilde(n, n)) + " != 1");
  Vec mu = I_tilde.topRightCorner(n, 1);
  Mat Sigma = symmetrize(I_tilde.topLeftCorner(n, n)) - mu * mu.transpose();
  return {mu, Sigma};
}

// One source-mode term of the moment recursion: with all blocks evaluated at
// (step k, mode i),
//
//   Phi_k(i) = A~ I A~' + A~ U' B~' + B~ U A~' + B~ Y B~'
//            + sum_r A~^(r) I A~^(r)' + sum_s B~^(s) Y B~^(s)' + D~ D~'.
//
// The next conditional moment is the backward-weighted mixture
// I_{k+1}(j) = sum_i s_k(i,j) Phi_k(i). Shared by the analytic propagator
// and the semidefinite-program row generator (single source of truth).
inline Mat propagation_term(const LiftedMatrices& L, int k, int i,
                            const Mat& I, const Mat& U, const Mat& Y,
                            bool include_additive = true) {
  const Mat& At = L.A[k][i];
  const Mat& Bt = L.B[k][i];
  Mat out = At * I * At.transpose();
  out += At * U.transpose() * Bt.transpose();
  out += Bt * U * At.transpose();
  out += Bt * Y * Bt.transpose();
  for (const Mat& Ar : L.A_mult[k][i]) out += Ar * I * Ar.transpose();
  for (const Mat& Bs : L.B_mult[k][i]) out += Bs * Y * Bs.transpose();
  if (include_additive) out += L.D[k][i] * L.D[k][i].transpose();
  return out;
}

// Propagate conditional second moments one step under given (U, Y) decision
// blocks. s_k is the backward transition matrix for step k.
inline std::vector<Mat> propagate(const LiftedMatrices& L, const Mat& s_k,
                                  int k, const std::vector<Mat>& I,
                                  const std::vector<Mat>& U,
                                  const std::vector<Mat>& Y) {
  const int n_modes = static_cast<int>(I.size());
  std::vector<Mat> next(n_modes);
  for (int j = 0; j < n_modes; ++j) {
    Mat acc = Mat::Zero(I[0].rows(), I[0].cols());
    for (int i = 0; i < n_modes; ++i)
      acc += s_k(i, j) * propagation_term(L, k, i, I[i], U[i], Y[i]);
    next[j] = symmetrize(acc);
  }
  return next;
}

// Propagate under the randomized affine feedback u = K (x;1) + nu with
// nu ~ (0, V), mode-dependent gains:
//
//   I_{k+1}(j) = sum_i s_k(i,j) [ (A~+B~K) I (A~+B~K)' + B~ V B~'
//              + sum_r A~^(r) I A~^(r)' + sum_s B~^(s)(K I K' + V)B~^(s)'
//              + D~ D~' ].
//
// Identical to propagate() under U = K I, Y = K I K' + V; kept as a separate
// evaluation path so the identity can be tested rather than assumed.
inline std::vector<Mat> propagate_closed_loop(const LiftedMatrices& L,
                                              const Mat& s_k, int k,
                                              const std::vector<Mat>& I,
                                              const std::vector<Mat>& K,
                                              const std::vector<Mat>& V) {
  const int n_modes = static_cast<int>(I.size());
  std::vector<Mat> next(n_modes);
  for (int j = 0; j < n_modes; ++j) {
    Mat acc = Mat::Zero(I[0].rows(), I[0].cols());
    for (int i = 0; i < n_modes; ++i) {
      const Mat& At = L.A[k][i];
      const Mat& Bt = L.B[k][i];
      const Mat Acl = At + Bt * K[i];
      Mat term = Acl * I[i] * Acl.transpose();
      term += Bt * V[i] * Bt.transpose();
      for (const Mat& Ar : L.A_mult[k][i]) term += Ar * I[i] * Ar.transpose();
      const Mat uu = K[i] * I[i] * K[i].transpose() + V[i];
      for (const Mat& Bs : L.B_mult[k][i]) term += Bs * uu * Bs.transpose();
      term += L.D[k][i] * L.D[k][i].transpose();
      acc += s_k(i, j) * term;
    }
    next[j] = symmetrize(acc);
  }
  return next;
}

// Mode-unconditional lifted second moment at one step.
inline Mat aggregate(const std::vector<Mat>& I_k, const Vec& rho_k) {
  if (static_cast<int>(I_k.size()) != rho_k.size())
    throw DimensionMismatch("aggregate: mode count mismatch");
  Mat acc = Mat::Zero(I_k[0].rows(), I_k[0].cols());
  for (int j = 0; j < rho_k.size(); ++j) acc += rho_k[j] * I_k[j];
  return acc;
}

// Expected quadratic stage cost accumulated over the horizon:
//   L = sum_{k=0}^{T-1} sum_j rho_k(j) [ tr(Q~_k(j) I_bar_k(j)) + tr(R_k(j) Y_bar_k(j)) ].
inline double cost(const MomentTrajectory& traj, const std::vector<Vec>& rho,
                   const LiftedMatrices& L,
                   const std::vector<std::vector<Mat>>& R) {
  const int T = static_cast<int>(traj.U_bar.size());
  double acc = 0.0;
  for (int k = 0; k < T; ++k)
    for (int j = 0; j < rho[k].size(); ++j)
      acc += rho[k][j] * ((L.Q[k][j] * traj.I_bar[k][j]).trace() +
                          (R[k][j] * traj.Y_bar[k][j]).trace());
  return acc;
}

// Unpack one (step, mode) cell of a trajectory.
inline ModeMoments mode_moments(const MomentTrajectory& traj, int k, int j) {
  ModeMoments mm;
  const Mat& I = traj.I_bar[k][j];
  auto [mu, Sigma] = extract(I);
  mm.mu = mu;
  mm.Sigma = Sigma;
  mm.trace_I = I.topLeftCorner(I.rows() - 1, I.cols() - 1).trace();
  if (k < static_cast<int>(traj.U_bar.size())) {
    const Mat& U = traj.U_bar[k][j];
    mm.v = U.rightCols(1);
    mm.Y = traj.Y_bar[k][j];
  }
  return mm;
}

}  // namespace mjls
