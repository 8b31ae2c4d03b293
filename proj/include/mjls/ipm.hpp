#pragma once

#include <Eigen/Cholesky>
#include <Eigen/QR>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <string>
#include <tuple>
#include <vector>

#include "mjls/conic.hpp"
#include "mjls/errors.hpp"

namespace mjls {

enum class ConicStatus {
  optimal,
  primal_infeasible,
  dual_infeasible,
  numerical_failure,
};

inline const char* conic_status_name(ConicStatus s) {
  switch (s) {
    case ConicStatus::optimal: return "optimal";
    case ConicStatus::primal_infeasible: return "primal_infeasible";
    case ConicStatus::dual_infeasible: return "dual_infeasible";
    case ConicStatus::numerical_failure: return "numerical_failure";
  }
  return "?";
}

struct ConicSolution {
  ConicStatus status = ConicStatus::numerical_failure;
  Vec x, y, z, s;  // primal/dual point (normalized), or certificate if infeasible
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  double duality_gap = std::numeric_limits<double>::infinity();
  std::string message;
};

struct IpmOptions {
  int max_iters = 100;
  double feastol = 1e-9;
  double abstol = 1e-9;
  double reltol = 1e-9;
  // Accept an almost-converged iterate at these tolerances when the strict
  // ones stall (floating point floor on hard instances).
  double feastol_soft = 5e-8;
  double reltol_soft = 5e-8;
  double step_fraction = 0.99;
  int refine_steps = 2;
};

// Interface the moment-steering layer programs against; lets another conic
// solver be dropped in without touching assembly or extraction code.
class SolverBackend {
 public:
  virtual ~SolverBackend() = default;
  virtual std::string name() const = 0;
  virtual ConicSolution solve(const ConicProgram& prog) const = 0;
};

namespace ipm {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Standard conic form of a ConicProgram:
//   min c'x  s.t.  A x = b,  G x + s = h,  s in (nonneg^q) x (PSD blocks).
// Inequality rows occupy the nonneg segment; each PSD membership
// smat(const + P x_loc) >= 0 becomes G_loc = -P, h = const.
struct Form {
  int n = 0, p = 0, m = 0, q = 0;
  Vec c, b, h;
  Mat A;  // dense equalities
  std::vector<std::vector<std::pair<int, double>>> lin;  // inequality rows
  struct Block {
    int dim = 0;
    int off = 0;  // offset of svec segment within the cone vector
    std::vector<int> cols;
    Mat P;
  };
  std::vector<Block> psd;
  double cone_degree = 0.0;
};

inline Form build_form(const ConicProgram& prog) {
  Form f;
  f.n = prog.num_vars;
  f.p = static_cast<int>(prog.equalities.size());
  f.q = static_cast<int>(prog.inequalities.size());
  f.A = Mat::Zero(f.p, f.n);
  f.b = Vec::Zero(f.p);
  for (int i = 0; i < f.p; ++i) {
    for (const auto& [idx, v] : prog.equalities[i].coef) f.A(i, idx) += v;
    f.b(i) = prog.equalities[i].rhs;
  }
  int m = f.q;
  for (const auto& mem : prog.memberships) {
    Form::Block blk;
    blk.dim = mem.dim;
    blk.off = m;
    blk.cols = mem.cols;
    blk.P = mem.P;
    m += svec_size(mem.dim);
    f.psd.push_back(std::move(blk));
  }
  f.m = m;
  f.h = Vec::Zero(m);
  f.lin.resize(f.q);
  for (int i = 0; i < f.q; ++i) {
    f.lin[i] = prog.inequalities[i].coef;
    f.h(i) = prog.inequalities[i].rhs;
  }
  for (size_t bi = 0; bi < prog.memberships.size(); ++bi)
    f.h.segment(f.psd[bi].off, svec_size(f.psd[bi].dim)) =
        prog.memberships[bi].constant;
  f.c = prog.c;
  f.cone_degree = f.q;
  for (const auto& blk : f.psd) f.cone_degree += blk.dim;
  return f;
}

inline Vec mult_G(const Form& f, const Vec& x) {
  Vec out = Vec::Zero(f.m);
  for (int i = 0; i < f.q; ++i) {
    double acc = 0.0;
    for (const auto& [idx, v] : f.lin[i]) acc += v * x(idx);
    out(i) = acc;
  }
  for (const auto& blk : f.psd) {
    Vec loc(blk.cols.size());
    for (size_t i = 0; i < blk.cols.size(); ++i) loc(i) = x(blk.cols[i]);
    out.segment(blk.off, svec_size(blk.dim)) = -(blk.P * loc);
  }
  return out;
}

inline Vec mult_Gt(const Form& f, const Vec& u) {
  Vec out = Vec::Zero(f.n);
  for (int i = 0; i < f.q; ++i)
    for (const auto& [idx, v] : f.lin[i]) out(idx) += v * u(i);
  for (const auto& blk : f.psd) {
    Vec loc = -(blk.P.transpose() * u.segment(blk.off, svec_size(blk.dim)));
    for (size_t i = 0; i < blk.cols.size(); ++i) out(blk.cols[i]) += loc(i);
  }
  return out;
}

// Lower Cholesky factor with an eigenvalue-clipping fallback for iterates
// that have drifted to the cone boundary.
inline Mat chol_lower(const Mat& S) {
  Eigen::LLT<Mat> llt(S);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(S));
  Vec ev = es.eigenvalues().cwiseMax(1e-14 * std::max(1.0, S.norm()));
  Mat W = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
  // Re-orthogonalize into a lower-triangular factor via LLT of W W'.
  Eigen::LLT<Mat> llt2(W * W.transpose());
  return llt2.matrixL();
}

// Nesterov-Todd scaling point for the nonneg segment and each PSD block.
struct Scaling {
  Vec d;      // nonneg: s_i / z_i  (= w_i^2)
  Vec lam_l;  // nonneg: sqrt(s_i z_i)
  std::vector<Mat> R, Rti;    // per block; Rti = R^{-T}
  std::vector<Vec> sig;       // NT spectrum per block
  std::vector<Mat> T, Tinv;   // R R', Rti Rti'
  std::vector<Vec> jweight;   // svec weights (sig_i+sig_j)/2 for lambda o (.)
  bool identity = false;
};

inline Scaling identity_scaling(const Form& f) {
  Scaling sc;
  sc.identity = true;
  sc.d = Vec::Ones(f.q);
  sc.lam_l = Vec::Ones(f.q);
  for (const auto& blk : f.psd) {
    sc.R.push_back(Mat::Identity(blk.dim, blk.dim));
    sc.Rti.push_back(Mat::Identity(blk.dim, blk.dim));
    sc.sig.push_back(Vec::Ones(blk.dim));
    sc.T.push_back(Mat::Identity(blk.dim, blk.dim));
    sc.Tinv.push_back(Mat::Identity(blk.dim, blk.dim));
    Vec w(svec_size(blk.dim));
    w.setOnes();
    sc.jweight.push_back(std::move(w));
  }
  return sc;
}

inline Scaling compute_scaling(const Form& f, const Vec& s, const Vec& z) {
  Scaling sc;
  sc.d = Vec(f.q);
  sc.lam_l = Vec(f.q);
  for (int i = 0; i < f.q; ++i) {
    sc.d(i) = s(i) / z(i);
    sc.lam_l(i) = std::sqrt(s(i) * z(i));
  }
  for (const auto& blk : f.psd) {
    const int d = blk.dim, sd = svec_size(d);
    Mat S = smat(s.segment(blk.off, sd), d);
    Mat Z = smat(z.segment(blk.off, sd), d);
    Mat Ls = chol_lower(S);
    Mat Lz = chol_lower(Z);
    Eigen::JacobiSVD<Mat> svd(Lz.transpose() * Ls,
                              Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec sg = svd.singularValues().cwiseMax(1e-150);
    Vec isq = sg.cwiseSqrt().cwiseInverse();
    Mat R = Ls * svd.matrixV() * isq.asDiagonal();
    Mat Rti = Lz * svd.matrixU() * isq.asDiagonal();
    sc.T.push_back(R * R.transpose());
    sc.Tinv.push_back(Rti * Rti.transpose());
    Vec w(sd);
    int idx = 0;
    for (int cc = 0; cc < d; ++cc)
      for (int rr = 0; rr <= cc; ++rr) w(idx++) = 0.5 * (sg(rr) + sg(cc));
    sc.jweight.push_back(std::move(w));
    sc.R.push_back(std::move(R));
    sc.Rti.push_back(std::move(Rti));
    sc.sig.push_back(std::move(sg));
  }
  return sc;
}

// The NT-scaled point lambda = W^{-T} s = W z (diagonal per block).
inline Vec lambda_vec(const Form& f, const Scaling& sc) {
  Vec out = Vec::Zero(f.m);
  out.head(f.q) = sc.lam_l;
  for (size_t bi = 0; bi < f.psd.size(); ++bi) {
    const auto& blk = f.psd[bi];
    Mat L = sc.sig[bi].asDiagonal();
    out.segment(blk.off, svec_size(blk.dim)) = svec(L);
  }
  return out;
}

// Congruence application helpers on concatenated cone vectors.
enum class ScaleOp { W, Wt, WmT, Wm1, WtW, WtW_inv };

inline Vec apply_scale(const Form& f, const Scaling& sc, ScaleOp op,
                       const Vec& v) {
  Vec out(f.m);
  for (int i = 0; i < f.q; ++i) {
    const double w = std::sqrt(sc.d(i));
    switch (op) {
      case ScaleOp::W:
      case ScaleOp::Wt: out(i) = w * v(i); break;
      case ScaleOp::WmT:
      case ScaleOp::Wm1: out(i) = v(i) / w; break;
      case ScaleOp::WtW: out(i) = sc.d(i) * v(i); break;
      case ScaleOp::WtW_inv: out(i) = v(i) / sc.d(i); break;
    }
  }
  for (size_t bi = 0; bi < f.psd.size(); ++bi) {
    const auto& blk = f.psd[bi];
    const int sd = svec_size(blk.dim);
    Mat V = smat(v.segment(blk.off, sd), blk.dim);
    Mat M;
    switch (op) {
      case ScaleOp::W: M = sc.R[bi].transpose() * V * sc.R[bi]; break;
      case ScaleOp::Wt: M = sc.R[bi] * V * sc.R[bi].transpose(); break;
      case ScaleOp::WmT: M = sc.Rti[bi].transpose() * V * sc.Rti[bi]; break;
      case ScaleOp::Wm1: M = sc.Rti[bi] * V * sc.Rti[bi].transpose(); break;
      case ScaleOp::WtW: M = sc.T[bi] * V * sc.T[bi]; break;
      case ScaleOp::WtW_inv: M = sc.Tinv[bi] * V * sc.Tinv[bi]; break;
    }
    out.segment(blk.off, sd) = svec(symmetrize(M));
  }
  return out;
}

// Jordan product u o v (symmetrized matrix product per block).
inline Vec jordan(const Form& f, const Vec& u, const Vec& v) {
  Vec out(f.m);
  out.head(f.q) = u.head(f.q).cwiseProduct(v.head(f.q));
  for (const auto& blk : f.psd) {
    const int sd = svec_size(blk.dim);
    Mat U = smat(u.segment(blk.off, sd), blk.dim);
    Mat V = smat(v.segment(blk.off, sd), blk.dim);
    out.segment(blk.off, sd) = svec(symmetrize(U * V));
  }
  return out;
}

// Solve lambda o u = v for u, exploiting that lambda is spectral.
inline Vec jordan_solve_lambda(const Form& f, const Scaling& sc, const Vec& v) {
  Vec out(f.m);
  for (int i = 0; i < f.q; ++i) out(i) = v(i) / sc.lam_l(i);
  for (size_t bi = 0; bi < f.psd.size(); ++bi) {
    const auto& blk = f.psd[bi];
    const int sd = svec_size(blk.dim);
    out.segment(blk.off, sd) =
        v.segment(blk.off, sd).cwiseQuotient(sc.jweight[bi]);
  }
  return out;
}

inline Vec cone_identity(const Form& f) {
  Vec e = Vec::Zero(f.m);
  e.head(f.q).setOnes();
  for (const auto& blk : f.psd)
    e.segment(blk.off, svec_size(blk.dim)) =
        svec(Mat::Identity(blk.dim, blk.dim));
  return e;
}

inline double min_cone_eig(const Form& f, const Vec& u) {
  double mn = kInf;
  if (f.q > 0) mn = std::min(mn, u.head(f.q).minCoeff());
  for (const auto& blk : f.psd)
    mn = std::min(mn,
                  min_eigenvalue(smat(u.segment(blk.off, svec_size(blk.dim)),
                                      blk.dim)));
  return mn;
}

// Largest t >= 0 with u + alpha*du in K for all alpha in [0, t] (may be inf).
inline double max_step(const Form& f, const Vec& u, const Vec& du) {
  double t = kInf;
  for (int i = 0; i < f.q; ++i)
    if (du(i) < 0.0) t = std::min(t, -u(i) / du(i));
  for (const auto& blk : f.psd) {
    const int sd = svec_size(blk.dim);
    Mat U = smat(u.segment(blk.off, sd), blk.dim);
    Mat dU = smat(du.segment(blk.off, sd), blk.dim);
    Mat L = chol_lower(U);
    Mat M = L.triangularView<Eigen::Lower>().solve(dU);
    M = L.triangularView<Eigen::Lower>()
            .solve(M.transpose())
            .transpose();
    const double mn = min_eigenvalue(symmetrize(M));
    if (mn < 0.0) t = std::min(t, -1.0 / mn);
  }
  return t;
}

// KKT system for one scaling, solved in augmented (unreduced) form:
//   [0   A'   G'  ] [dx]   [d1]
//   [A   0    0   ] [dy] = [d2]
//   [G   0  -W'W  ] [dz]   [d3]
// A Schur-complement elimination squares the scaling's condition number and
// cannot deliver accurate directions once the complementarity gap is small,
// so the full system is factored instead. Row-pivoted LU keeps element
// growth bounded on this saddle-point structure (symmetric factorizations
// without 2x2 pivots do not); the matrix is nonsingular whenever the scaling
// is positive definite, the equality rows are independent, and every
// variable appears in some cone row.
using LdMat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
using LdVec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

struct KktFactor {
  const Form* f = nullptr;
  const Scaling* sc = nullptr;
  Eigen::PartialPivLU<Mat> Kf;  // factor of the equilibrated augmented matrix
  Vec Dscale;                   // symmetric Ruiz equilibration of the matrix
  Mat At;                       // cached A'
  // Extended-precision copies of the system blocks. Near convergence the
  // augmented matrix has condition ~1/mu, so refinement residuals computed
  // in working precision bottom out around eps/mu; evaluating them in long
  // double pushes the achievable accuracy three orders further.
  LdMat Ald, Gld, Wld;
  bool ok = false;
};

inline Mat dense_wtw(const Form& f, const Scaling& sc) {
  Mat W = Mat::Zero(f.m, f.m);
  W.diagonal().head(f.q) = sc.d;
  for (size_t bi = 0; bi < f.psd.size(); ++bi) {
    const auto& blk = f.psd[bi];
    const int d = blk.dim, sd = svec_size(d);
    // svec-space matrix of X -> R' X R; the block of W'W is its Gram square,
    // which stays numerically positive semidefinite however ill-conditioned
    // the scaling becomes near convergence.
    Mat M(sd, sd);
    Vec e = Vec::Zero(sd);
    for (int c = 0; c < sd; ++c) {
      e(c) = 1.0;
      M.col(c) =
          svec(symmetrize(sc.R[bi].transpose() * smat(e, d) * sc.R[bi]));
      e(c) = 0.0;
    }
    // svec matrix of X -> T X T with T = R R' is M'M (adjoint identity for
    // the congruence maps), a Gram product that stays numerically PSD.
    W.block(blk.off, blk.off, sd, sd) = M.transpose() * M;
  }
  return W;
}

inline Mat dense_g(const Form& f) {
  Mat G = Mat::Zero(f.m, f.n);
  for (int i = 0; i < f.q; ++i)
    for (const auto& [j, v] : f.lin[i]) G(i, j) = v;
  for (const auto& blk : f.psd) {
    const int sd = svec_size(blk.dim);
    const int nloc = static_cast<int>(blk.cols.size());
    for (int a = 0; a < nloc; ++a)
      G.block(blk.off, blk.cols[a], sd, 1) -= blk.P.col(a);
  }
  return G;
}

inline KktFactor factor_kkt(const Form& f, const Scaling& sc) {
  KktFactor k;
  k.f = &f;
  k.sc = &sc;
  k.At = f.A.transpose();
  const int n = f.n, p = f.p, m = f.m;
  const int dim = n + p + m;
  Mat K = Mat::Zero(dim, dim);
  K.block(0, n, n, p) = k.At;
  K.block(n, 0, p, n) = f.A;
  Mat G = dense_g(f);
  Mat W = dense_wtw(f, sc);
  K.block(0, n + p, n, m) = G.transpose();
  K.block(n + p, 0, m, n) = G;
  K.block(n + p, n + p, m, m) = -W;
  // Near convergence the scaling block spans many orders of magnitude; a few
  // passes of symmetric Ruiz equilibration keep the LU factorization
  // accurate regardless.
  Vec D = Vec::Ones(dim);
  Mat Ks = K;
  for (int pass = 0; pass < 3; ++pass) {
    for (int i = 0; i < dim; ++i) {
      const double rn = Ks.row(i).lpNorm<Eigen::Infinity>();
      if (rn > 0.0 && std::isfinite(rn)) D(i) /= std::sqrt(rn);
    }
    Ks = D.asDiagonal() * K * D.asDiagonal();
  }
  k.Dscale = D;
  k.Kf.compute(Ks);
  k.ok = Ks.allFinite();
  k.Ald = f.A.cast<long double>();
  k.Gld = G.cast<long double>();
  k.Wld = W.cast<long double>();
  return k;
}

struct KktSol {
  Vec dx, dy, dz;
};

inline KktSol solve_kkt_once(const KktFactor& k, const Vec& d1, const Vec& d2,
                             const Vec& d3) {
  const Form& f = *k.f;
  Vec rhs(f.n + f.p + f.m);
  rhs << d1, d2, d3;
  // Equilibrated system: (D K D) (D^{-1} u) = D rhs.
  Vec u = k.Dscale.asDiagonal() *
          k.Kf.solve(k.Dscale.asDiagonal() * rhs);
  KktSol out;
  out.dx = u.head(f.n);
  out.dy = u.segment(f.n, f.p);
  out.dz = u.tail(f.m);
  return out;
}

inline KktSol solve_kkt(const KktFactor& k, const Vec& d1, const Vec& d2,
                        const Vec& d3, int refine_steps) {
  KktSol s = solve_kkt_once(k, d1, d2, d3);
  double prev = kInf;
  KktSol backup = s;
  const LdVec d1l = d1.cast<long double>();
  const LdVec d2l = d2.cast<long double>();
  const LdVec d3l = d3.cast<long double>();
  for (int r = 0; r <= refine_steps; ++r) {
    const LdVec dxl = s.dx.cast<long double>();
    const LdVec dyl = s.dy.cast<long double>();
    const LdVec dzl = s.dz.cast<long double>();
    Vec r1 =
        (d1l - (k.Ald.transpose() * dyl + k.Gld.transpose() * dzl))
            .cast<double>();
    Vec r2 = (d2l - k.Ald * dxl).cast<double>();
    Vec r3 = (d3l - (k.Gld * dxl - k.Wld * dzl)).cast<double>();
    const double rn = std::max({r1.lpNorm<Eigen::Infinity>(),
                                r2.size() ? r2.lpNorm<Eigen::Infinity>() : 0.0,
                                r3.lpNorm<Eigen::Infinity>()});
    if (!(rn < prev)) return backup;  // correction made things worse; undo it
    prev = rn;
    backup = s;
    if (r == refine_steps) break;
    KktSol c = solve_kkt_once(k, r1, r2, r3);
    s.dx += c.dx;
    s.dy += c.dy;
    s.dz += c.dz;
  }
  return s;
}

}  // namespace ipm

// Dense primal-dual interior-point solver on the self-dual embedding with
// Nesterov-Todd scaling and Mehrotra predictor-corrector steps. Handles the
// cone product (nonneg)^q x PSD x ... x PSD; equalities are kept explicit
// and eliminated through a Schur complement. Deterministic: identical input
// bytes produce identical iterates.
class InteriorPointBackend final : public SolverBackend {
 public:
  explicit InteriorPointBackend(IpmOptions opts = {}) : opts_(opts) {}
  std::string name() const override { return "ipm"; }

  ConicSolution solve(const ConicProgram& prog) const override {
    using namespace ipm;
    Form f = build_form(prog);
    ConicSolution sol;

    // The assembled moment program can carry exactly dependent equality rows
    // (a terminal-equality component is also pinned through the propagation
    // and initial rows).  The elimination KKT needs A with full row rank, so
    // keep a maximal independent subset; a dropped row whose right-hand side
    // is not implied makes the linear system alone infeasible.  (The dual
    // vector y stays in the reduced row space; nothing downstream reads it
    // row by row.)
    if (f.p > 0) {
      Eigen::ColPivHouseholderQR<Mat> qr(f.A.transpose());
      qr.setThreshold(1e-10);
      const int rank = static_cast<int>(qr.rank());
      if (rank < f.p) {
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(f.A);
        const Vec x0 = cod.solve(f.b);
        const double resid = (f.A * x0 - f.b).lpNorm<Eigen::Infinity>();
        if (resid > 1e-8 * (1.0 + f.b.lpNorm<Eigen::Infinity>())) {
          sol.status = ConicStatus::primal_infeasible;
          sol.message =
              "equality rows are inconsistent (dependent row residual " +
              std::to_string(resid) + ")";
          return sol;
        }
        std::vector<int> kept(qr.colsPermutation().indices().data(),
                              qr.colsPermutation().indices().data() + rank);
        std::sort(kept.begin(), kept.end());
        Mat A_red(rank, f.n);
        Vec b_red(rank);
        for (int i = 0; i < rank; ++i) {
          A_red.row(i) = f.A.row(kept[i]);
          b_red(i) = f.b(kept[i]);
        }
        f.A = std::move(A_red);
        f.b = std::move(b_red);
        f.p = rank;
      }
    }

    // --- Initialization: two identity-scaled KKT solves ------------------
    const Scaling sc0 = identity_scaling(f);
    KktFactor k0 = factor_kkt(f, sc0);
    if (!k0.ok) {
      sol.message = "initial KKT factorization failed";
      return sol;
    }
    Vec x, y, s, z;
    {
      KktSol pr = solve_kkt(k0, Vec::Zero(f.n), f.b, f.h, opts_.refine_steps);
      x = pr.dx;
      s = -(pr.dz);  // s = h - Gx
      const double ts = -min_cone_eig(f, s);
      if (ts >= -1e-8 * std::max(1.0, s.norm()))
        s += (1.0 + ts) * cone_identity(f);
      KktSol du = solve_kkt(k0, -f.c, Vec::Zero(f.p), Vec::Zero(f.m),
                            opts_.refine_steps);
      y = du.dy;
      z = du.dz;
      const double tz = -min_cone_eig(f, z);
      if (tz >= -1e-8 * std::max(1.0, z.norm()))
        z += (1.0 + tz) * cone_identity(f);
    }
    double tau = 1.0, kappa = 1.0;

    const double resx0 = std::max(1.0, f.c.norm());
    const double resy0 = std::max(1.0, f.b.norm());
    const double resz0 = std::max(1.0, f.h.norm());
    const double nu = f.cone_degree;

    double best_score = kInf;
    ConicSolution best;
    int stalled = 0;          // consecutive iterations much worse than the best
    int iters_since_best = 0;  // iterations since the best iterate improved

    for (int iter = 0; iter <= opts_.max_iters; ++iter) {
      // Residuals of the embedding.
      Vec rx = k0.At * y + mult_Gt(f, z) + f.c * tau;  // At cached in k0
      Vec ry = f.A * x - f.b * tau;
      Vec rz = mult_G(f, x) + s - f.h * tau;
      const double rt = kappa + f.c.dot(x) + f.b.dot(y) + f.h.dot(z);

      const double pcost = f.c.dot(x) / tau;
      const double dcost = -(f.b.dot(y) + f.h.dot(z)) / tau;
      const double gap = s.dot(z) / (tau * tau);
      double relgap = kInf;
      if (pcost < 0.0)
        relgap = gap / (-pcost);
      else if (dcost > 0.0)
        relgap = gap / dcost;
      const double pres =
          std::max(ry.norm() / resy0, rz.norm() / resz0) / tau;
      const double dres = rx.norm() / resx0 / tau;

      auto fill_point = [&](ConicSolution& out) {
        out.x = x / tau;
        out.y = y / tau;
        out.z = z / tau;
        out.s = s / tau;
        out.objective = pcost;
        out.iterations = iter;
        out.primal_residual = pres;
        out.dual_residual = dres;
        out.duality_gap = gap;
      };

      const double score = std::max({pres, dres, relgap});
      ++iters_since_best;
      if (score < best_score) {
        best_score = score;
        fill_point(best);
        stalled = 0;
        iters_since_best = 0;
      } else if (score > 10.0 * best_score) {
        ++stalled;
      }

      static const bool verbose = std::getenv("MJLS_IPM_VERBOSE") != nullptr;
      if (verbose)
        std::fprintf(stderr,
                     "ipm iter %3d  pres %.2e dres %.2e gap %.2e relgap %.2e "
                     "tau %.2e kappa %.2e\n",
                     iter, pres, dres, gap, relgap, tau, kappa);

      if (pres <= opts_.feastol && dres <= opts_.feastol &&
          (gap <= opts_.abstol || relgap <= opts_.reltol)) {
        fill_point(sol);
        sol.status = ConicStatus::optimal;
        sol.message = "converged";
        return sol;
      }

      // Certificates of infeasibility.
      const double ct = -(f.h.dot(z) + f.b.dot(y));
      if (ct > 0.0) {
        const double pinfres =
            (k0.At * y + mult_Gt(f, z)).norm() / resx0 / ct;
        if (pinfres <= opts_.feastol) {
          sol.status = ConicStatus::primal_infeasible;
          sol.y = y / ct;
          sol.z = z / ct;
          sol.iterations = iter;
          sol.message = "primal infeasibility certificate found";
          return sol;
        }
      }
      if (f.c.dot(x) < 0.0) {
        const double dd = -f.c.dot(x);
        const double dinfres =
            std::max((f.A * x).norm() / resy0,
                     (mult_G(f, x) + s).norm() / resz0) /
            dd;
        if (dinfres <= opts_.feastol) {
          sol.status = ConicStatus::dual_infeasible;
          sol.x = x / dd;
          sol.s = s / dd;
          sol.iterations = iter;
          sol.message = "dual infeasibility certificate found";
          return sol;
        }
      }

      if (stalled >= 4) {
        sol.message = "numerical limit reached";
        break;
      }
      if (best_score <= std::min(opts_.feastol_soft, opts_.reltol_soft) &&
          iters_since_best >= 8) {
        sol.message = "progress stalled at acceptable accuracy";
        break;
      }
      if (iter == opts_.max_iters) break;

      // --- Scaling, factorization, directions ---------------------------
      const Scaling sc = compute_scaling(f, s, z);
      const Vec lam = lambda_vec(f, sc);
      const double mu = (s.dot(z) + tau * kappa) / (nu + 1.0);
      KktFactor kf = factor_kkt(f, sc);
      if (!kf.ok) {
        sol.message = "KKT factorization failed";
        break;
      }
      KktSol k1 = solve_kkt(kf, -f.c, f.b, f.h, opts_.refine_steps);
      const double den =
          f.c.dot(k1.dx) + f.b.dot(k1.dy) + f.h.dot(k1.dz) - kappa / tau;

      auto direction = [&](double eta, const Vec& ds_rhs, double dt_rhs) {
        // Returns (dx,dy,dz,ds,dtau,dkappa) for residual weight eta and
        // complementarity targets ds_rhs (cone) / dt_rhs (tau-kappa).
        Vec wls = apply_scale(f, sc, ScaleOp::Wt,
                              jordan_solve_lambda(f, sc, ds_rhs));
        KktSol k2 = solve_kkt(kf, -eta * rx, -eta * ry, -eta * rz - wls,
                              opts_.refine_steps);
        const double num = -eta * rt - dt_rhs / tau -
                           (f.c.dot(k2.dx) + f.b.dot(k2.dy) + f.h.dot(k2.dz));
        const double dtau = num / den;
        Vec dx = k2.dx + dtau * k1.dx;
        Vec dy = k2.dy + dtau * k1.dy;
        Vec dz = k2.dz + dtau * k1.dz;
        Vec dsv = (wls.cast<long double>() -
                   kf.Wld * dz.cast<long double>())
                      .cast<double>();
        const double dkappa = (dt_rhs - kappa * dtau) / tau;
        return std::tuple<Vec, Vec, Vec, Vec, double, double>(
            std::move(dx), std::move(dy), std::move(dz), std::move(dsv), dtau,
            dkappa);
      };

      auto step_bound = [&](const Vec& dsv, const Vec& dzv, double dtau,
                            double dkappa) {
        double t = std::min(max_step(f, s, dsv), max_step(f, z, dzv));
        if (dtau < 0.0) t = std::min(t, -tau / dtau);
        if (dkappa < 0.0) t = std::min(t, -kappa / dkappa);
        return t;
      };

      // Predictor (affine scaling direction).
      Vec ds_aff_rhs = -jordan(f, lam, lam);
      auto [dxa, dya, dza, dsa, dtaua, dkappaa] =
          direction(1.0, ds_aff_rhs, -tau * kappa);
      const double alpha_aff =
          std::min(1.0, step_bound(dsa, dza, dtaua, dkappaa));
      const double sigma = std::pow(1.0 - alpha_aff, 3);

      // Corrector (combined direction).
      Vec corr = jordan(f, apply_scale(f, sc, ScaleOp::WmT, dsa),
                        apply_scale(f, sc, ScaleOp::W, dza));
      Vec ds_rhs = ds_aff_rhs - corr + sigma * mu * cone_identity(f);
      const double dt_rhs = -tau * kappa - dtaua * dkappaa + sigma * mu;
      auto [dx, dy, dz, dsv, dtau, dkappa] =
          direction(1.0 - sigma, ds_rhs, dt_rhs);

      double alpha =
          std::min(1.0, opts_.step_fraction * step_bound(dsv, dz, dtau, dkappa));
      if (verbose) {
        // Defects of the linearized equations the combined direction must
        // satisfy; growth here means the KKT solves are losing accuracy.
        const double eta = 1.0 - sigma;
        const double defx =
            (k0.At * dy + mult_Gt(f, dz) + f.c * dtau + eta * rx).norm();
        const double defy = (f.A * dx - f.b * dtau + eta * ry).norm();
        const double defz =
            (mult_G(f, dx) + dsv - f.h * dtau + eta * rz).norm();
        std::fprintf(stderr,
                     "    alpha_aff %.2e sigma %.2e alpha %.2e  defects "
                     "%.2e %.2e %.2e\n",
                     alpha_aff, sigma, alpha, defx, defy, defz);
      }
      if (!std::isfinite(alpha) || alpha <= 0.0) {
        sol.message = "step size collapsed";
        break;
      }
      x += alpha * dx;
      y += alpha * dy;
      z += alpha * dz;
      s += alpha * dsv;
      tau += alpha * dtau;
      kappa += alpha * dkappa;
      if (!(tau > 1e-12) && !(kappa > 1e-12)) {
        sol.message = "tau and kappa collapsed";
        break;
      }
      if (!x.allFinite() || !z.allFinite() || !s.allFinite()) {
        sol.message = "iterates diverged";
        break;
      }
    }

    // Strict tolerances not met; accept the best iterate if it clears the
    // soft tolerances, otherwise report failure with its residuals.
    const std::string stop_reason =
        sol.message.empty() ? "iteration limit reached" : sol.message;
    if (best_score < kInf) {
      sol = best;
      if (best.primal_residual <= opts_.feastol_soft &&
          best.dual_residual <= opts_.feastol_soft &&
          best.duality_gap <= std::max(opts_.reltol_soft,
                                       opts_.reltol_soft *
                                           std::abs(best.objective))) {
        sol.status = ConicStatus::optimal;
        sol.message = "converged (soft tolerance)";
        return sol;
      }
    }
    sol.message = stop_reason + " (best: pres " +
                  std::to_string(sol.primal_residual) + ", dres " +
                  std::to_string(sol.dual_residual) + ", gap " +
                  std::to_string(sol.duality_gap) + ")";
    sol.status = ConicStatus::numerical_failure;
    return sol;
  }

 private:
  IpmOptions opts_;
};

}  // namespace mjls
