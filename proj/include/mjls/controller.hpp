#pragma once

#include <string>
#include <vector>

#include "mjls/moments.hpp"

namespace mjls {

// Randomized affine state feedback: at step k in mode j,
//   u = K[k][j] (x; 1) + nu,   nu ~ (0, V[k][j]),
// with V_sqrt a factor V = F F' used by the simulator to draw nu.
struct Policy {
  int T = 0, n_modes = 0, n_x = 0, n_u = 0;
  std::vector<std::vector<Mat>> K;       // [k][j], n_u x (n_x+1)
  std::vector<std::vector<Mat>> V;       // [k][j], n_u x n_u
  std::vector<std::vector<Mat>> V_sqrt;  // [k][j], n_u x n_u
};

// Recover the unique lossless policy from a feasible moment trajectory:
//   K = U I^+,  V = Y - K I K'.
// The stacked cone constraint guarantees U lies in the row space of I and
// V >= 0 up to solver tolerance; both are verified, not assumed.
inline Policy extract(const MomentTrajectory& traj) {
  Policy pol;
  pol.T = static_cast<int>(traj.U_bar.size());
  pol.n_modes = pol.T > 0 ? static_cast<int>(traj.U_bar[0].size()) : 0;
  if (pol.T == 0 || pol.n_modes == 0)
    throw DimensionMismatch("extract: empty trajectory");
  pol.n_u = static_cast<int>(traj.U_bar[0][0].rows());
  pol.n_x = static_cast<int>(traj.U_bar[0][0].cols()) - 1;
  pol.K.assign(pol.T, {});
  pol.V.assign(pol.T, {});
  pol.V_sqrt.assign(pol.T, {});
  for (int k = 0; k < pol.T; ++k)
    for (int j = 0; j < pol.n_modes; ++j) {
      const Mat I = symmetrize(traj.I_bar[k][j]);
      const Mat& U = traj.U_bar[k][j];
      const Mat K = U * sym_pinv(I, 1e-10);
      const double resid = (U - K * I).norm();
      if (resid > 1e-6 * (1.0 + U.norm()))
        throw NotRealizable(
            "extract: U is not in the row space of I at step " +
            std::to_string(k) + ", mode " + std::to_string(j) +
            " (residual " + std::to_string(resid) + ")");
      Mat V = symmetrize(traj.Y_bar[k][j] - K * I * K.transpose());
      Eigen::SelfAdjointEigenSolver<Mat> es(V);
      Vec ev = es.eigenvalues();
      for (int i = 0; i < ev.size(); ++i) {
        if (ev(i) < -1e-8)
          throw NotRealizable(
              "extract: injected covariance has eigenvalue " +
              std::to_string(ev(i)) + " at step " + std::to_string(k) +
              ", mode " + std::to_string(j));
        if (ev(i) < 0.0) ev(i) = 0.0;
      }
      V = es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
      pol.K[k].push_back(K);
      pol.V[k].push_back(symmetrize(V));
      pol.V_sqrt[k].push_back(es.eigenvectors() *
                              ev.cwiseSqrt().asDiagonal());
    }
  return pol;
}

// Apply the policy: u = K (x; 1) + nu.
inline Vec control(const Policy& pol, int k, int j, const Vec& x,
                   const Vec& nu) {
  Vec xt(x.size() + 1);
  xt.head(x.size()) = x;
  xt(x.size()) = 1.0;
  return pol.K[k][j] * xt + nu;
}

// Worst relative one-step reproduction error of the closed loop: propagate
// each I_bar_k(j) under the extracted policy and compare with I_bar_{k+1}(j).
// A lossless extraction keeps this at solver-tolerance level.
inline double losslessness_residual(const MomentTrajectory& traj,
                                    const Policy& pol,
                                    const LiftedMatrices& L,
                                    const std::vector<Mat>& s_bwd) {
  double worst = 0.0;
  for (int k = 0; k < pol.T; ++k) {
    const std::vector<Mat> next = propagate_closed_loop(
        L, s_bwd[k], k, traj.I_bar[k], pol.K[k], pol.V[k]);
    for (int j = 0; j < pol.n_modes; ++j) {
      const double rel = (next[j] - traj.I_bar[k + 1][j]).norm() /
                         std::max(1.0, traj.I_bar[k + 1][j].norm());
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

// Deterministic-affine feasibility probe: grid-search pure affine laws
// u = K x + v (no injected randomness) on a single-mode, one-step instance
// and report the minimum terminal-moment residual ||I_1(K) - I_target||_F.
// v is chosen per gain as the least-squares mean matcher, so the scan is
// over gain entries only. Restricted to n_u = 1 and n_x <= 2: the probe is
// a certification tool for instances where affine laws provably fail, not a
// general search.
inline double affine_feasibility_probe(const MjlsModel& model,
                                       const BoundarySpec& boundary,
                                       double grid_limit = 5.0,
                                       double grid_step = 1e-3) {
  if (model.n_modes != 1 || model.horizon != 1)
    throw ConfigError("affine probe requires a single-mode one-step model");
  if (model.n_u != 1 || model.n_x > 2)
    throw ConfigError("affine probe requires n_u = 1 and n_x <= 2");
  if (terminal_is_modewise(boundary.kind) ||
      terminal_is_upper_bound(boundary.kind))
    throw ConfigError("affine probe requires an equality terminal target");

  const LiftedMatrices L = lift(model);
  const int nx = model.n_x, nl = nx + 1;
  const Mat I0 = embed(boundary.mu_in[0], boundary.Sigma_in[0]);
  const Mat It = embed(boundary.mu_out[0], boundary.Sigma_out[0]);
  const Vec& mu0 = boundary.mu_in[0];
  const Vec b = L.B[0][0].col(0);  // lifted input column (n_u = 1)

  // Mean-matching intercept: v(K) = v0 - K mu0 with
  // v0 = B^+ (mu_out - A mu_in).
  const Mat& A = model.A[0][0];
  const Mat& B = model.B[0][0];
  const double v0 =
      (B.transpose() * B).ldlt().solve(B.transpose() *
                                       (boundary.mu_out[0] - A * mu0))(0);

  // Lifted gain row w(K) = w_base + sum_i k_i w_i, where k_i are the gain
  // entries: w carries K in the first nx slots and v(K) in the last.
  const int d = nx;  // number of gridded parameters
  std::vector<Vec> wbasis(d + 1, Vec::Zero(nl));
  wbasis[0](nx) = v0;
  for (int i = 0; i < d; ++i) {
    wbasis[i + 1](i) = 1.0;
    wbasis[i + 1](nx) = -mu0(i);
  }

  // I_1(w) = M0 + b t' + t b' + q C, with t = I0 w', q = w I0 w',
  // M0 the gain-independent part and C = b b' + sum_s b_s b_s'.
  Mat M0 = L.A[0][0] * I0 * L.A[0][0].transpose();
  for (const Mat& Ar : L.A_mult[0][0]) M0 += Ar * I0 * Ar.transpose();
  M0 += L.D[0][0] * L.D[0][0].transpose();
  Mat C = b * b.transpose();
  for (const Mat& Bs : L.B_mult[0][0])
    C += Bs.col(0) * Bs.col(0).transpose();

  // Closed-loop gain coupling: I_1 depends on w through the affine-in-
  // monomial expansion Delta(k) = sum_m phi_m(k) Delta_m. The residual
  // squared is then phi' Gram phi, a quartic scanned row-wise by Horner.
  // Monomials: 1, k_1..k_d, and the d(d+1)/2 products k_i k_j (i <= j).
  std::vector<Vec> t(d + 1);
  for (int i = 0; i <= d; ++i) t[i] = I0 * wbasis[i];
  std::vector<Mat> delta;
  std::vector<std::array<int, 2>> mono;  // exponents of (k_1, k_2)
  auto expo = [&](int i) {  // basis index -> exponent pair contribution
    std::array<int, 2> e{0, 0};
    if (i >= 1) e[i - 1] = 1;
    return e;
  };
  // Constant term includes the target offset.
  delta.push_back(M0 - It + b * t[0].transpose() + t[0] * b.transpose() +
                  wbasis[0].dot(t[0]) * C);
  mono.push_back({0, 0});
  for (int i = 1; i <= d; ++i) {
    delta.push_back(b * t[i].transpose() + t[i] * b.transpose() +
                    2.0 * wbasis[0].dot(t[i]) * C);
    mono.push_back(expo(i));
  }
  for (int i = 1; i <= d; ++i)
    for (int j = i; j <= d; ++j) {
      const double scale = (i == j) ? 1.0 : 2.0;
      delta.push_back(scale * wbasis[i].dot(t[j]) * C);
      std::array<int, 2> e{0, 0};
      e[i - 1] += 1;
      e[j - 1] += 1;
      mono.push_back(e);
    }
  const int nm = static_cast<int>(delta.size());
  Mat gram(nm, nm);
  for (int a = 0; a < nm; ++a)
    for (int c = 0; c < nm; ++c)
      gram(a, c) = (delta[a].array() * delta[c].array()).sum();

  const long steps = std::lround(2.0 * grid_limit / grid_step);
  double best = std::numeric_limits<double>::infinity();
  if (d == 1) {
    // Quartic in k_1; single Horner scan.
    double poly[5] = {0, 0, 0, 0, 0};
    for (int a = 0; a < nm; ++a)
      for (int c = 0; c < nm; ++c) poly[mono[a][0] + mono[c][0]] += gram(a, c);
    for (long s1 = 0; s1 <= steps; ++s1) {
      const double k1 = -grid_limit + s1 * grid_step;
      double r = (((poly[4] * k1 + poly[3]) * k1 + poly[2]) * k1 + poly[1]) *
                     k1 + poly[0];
      if (r < best) best = r;
    }
  } else {
    for (long s1 = 0; s1 <= steps; ++s1) {
      const double k1 = -grid_limit + s1 * grid_step;
      // Collapse k_1 and collect the quartic in k_2.
      double poly[5] = {0, 0, 0, 0, 0};
      double k1pow[5] = {1, k1, k1 * k1, k1 * k1 * k1, k1 * k1 * k1 * k1};
      for (int a = 0; a < nm; ++a)
        for (int c = 0; c < nm; ++c) {
          const int e1 = mono[a][0] + mono[c][0];
          const int e2 = mono[a][1] + mono[c][1];
          poly[e2] += gram(a, c) * k1pow[e1];
        }
      for (long s2 = 0; s2 <= steps; ++s2) {
        const double k2 = -grid_limit + s2 * grid_step;
        double r = (((poly[4] * k2 + poly[3]) * k2 + poly[2]) * k2 +
                    poly[1]) * k2 + poly[0];
        if (r < best) best = r;
      }
    }
  }
  return std::sqrt(std::max(0.0, best));
}

}  // namespace mjls
