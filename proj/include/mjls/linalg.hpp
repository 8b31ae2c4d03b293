#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "mjls/errors.hpp"

namespace mjls {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

inline double min_eigenvalue(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().minCoeff();
}

// PSD test after forced symmetrization: min eig >= -tol.
inline bool is_psd(const Mat& m, double tol = 1e-10) {
  if (m.rows() != m.cols()) return false;
  return min_eigenvalue(symmetrize(m)) >= -tol;
}

// Factor L with L*L^T = sym(m), clipping slightly negative eigenvalues to
// zero. Used for sampling and for storing policy noise factors. Throws NotPsd
// when an eigenvalue is below -tol.
inline Mat psd_sqrt(const Mat& m, double tol = 1e-8) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  Vec ev = es.eigenvalues();
  for (int i = 0; i < ev.size(); ++i) {
    if (ev(i) < -tol)
      throw NotPsd("psd_sqrt: eigenvalue " + std::to_string(ev(i)) +
                   " below tolerance");
    if (ev(i) < 0.0) ev(i) = 0.0;
  }
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

// Nearest (Frobenius) positive semidefinite matrix: symmetrize and clip
// negative eigenvalues to zero.
inline Mat psd_project(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  Vec ev = es.eigenvalues().cwiseMax(0.0);
  return symmetrize(es.eigenvectors() * ev.asDiagonal() *
                    es.eigenvectors().transpose());
}

// Moore-Penrose pseudoinverse of a symmetric matrix with a relative
// eigenvalue cutoff (eigenvalues below cutoff_rel * max|eig| are dropped).
inline Mat sym_pinv(const Mat& m, double cutoff_rel = 1e-10) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  Vec ev = es.eigenvalues();
  const double cut = cutoff_rel * ev.cwiseAbs().maxCoeff();
  Vec inv = Vec::Zero(ev.size());
  for (int i = 0; i < ev.size(); ++i)
    if (std::abs(ev(i)) > cut) inv(i) = 1.0 / ev(i);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

// --- Symmetric vectorization -------------------------------------------
//
// svec packs the upper triangle of an n x n symmetric matrix column by
// column ((0,0), (0,1), (1,1), (0,2), ...) into a vector of length
// n(n+1)/2, scaling off-diagonal entries by sqrt(2) so that
// svec(X) . svec(Y) = tr(XY) for symmetric X, Y.

inline int svec_size(int n) { return n * (n + 1) / 2; }

inline int svec_index(int r, int c) {
  // requires r <= c
  return c * (c + 1) / 2 + r;
}

inline Vec svec(const Mat& m) {
  const int n = static_cast<int>(m.rows());
  if (m.cols() != n) throw DimensionMismatch("svec: matrix not square");
  static const double rt2 = std::sqrt(2.0);
  Vec v(svec_size(n));
  int idx = 0;
  for (int c = 0; c < n; ++c)
    for (int r = 0; r <= c; ++r) v(idx++) = (r == c) ? m(r, c) : rt2 * m(r, c);
  return v;
}

inline Mat smat(const Vec& v, int n) {
  if (v.size() != svec_size(n)) throw DimensionMismatch("smat: bad length");
  static const double irt2 = 1.0 / std::sqrt(2.0);
  Mat m(n, n);
  int idx = 0;
  for (int c = 0; c < n; ++c)
    for (int r = 0; r <= c; ++r) {
      const double x = v(idx++);
      if (r == c) {
        m(r, c) = x;
      } else {
        m(r, c) = irt2 * x;
        m(c, r) = irt2 * x;
      }
    }
  return m;
}

}  // namespace mjls
