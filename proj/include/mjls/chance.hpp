#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mjls/moments.hpp"

namespace mjls {

// Probabilistic path constraints. Two geometric primitives, each on either
// the state or the control:
//   ball:      P( ||y_s - center|| <= radius ) >= 1 - eps
//   halfspace: P( normal' y_s     <= offset  ) >= 1 - eps
// Each carries per-mode reference vectors used by the convex surrogate; an
// empty ref means "use the default" (zero, with ball-center fallback when
// zero is not strictly inside the ball).
struct BallConstraint {
  int step = 0;
  Vec center;
  double radius = 0.0;
  double eps = 0.0;
  std::vector<Vec> ref;
};

struct HalfspaceConstraint {
  int step = 0;
  Vec normal;           // alpha
  double offset = 0.0;  // beta
  double eps = 0.0;
  std::vector<Vec> ref;
};

struct ChanceSpec {
  std::vector<BallConstraint> ball_state;
  std::vector<BallConstraint> ball_control;
  std::vector<HalfspaceConstraint> half_state;
  std::vector<HalfspaceConstraint> half_control;
  bool empty() const {
    return ball_state.empty() && ball_control.empty() && half_state.empty() &&
           half_control.empty();
  }
};

// One affine-in-moments inequality row:
//   state kind:    sum_j tr(E[j] I_bar_s(j))                          <= rhs
//   control kind:  sum_j [ tr(F[j] Y_bar_s(j)) + tr(G[j] U_bar_s(j)) ] <= rhs
// E is (n_x+1)x(n_x+1), F is n_u x n_u, G is (n_x+1) x n_u.
struct TraceConstraint {
  enum class Kind { state, control };
  Kind kind = Kind::state;
  int step = 0;
  std::vector<Mat> E;
  std::vector<Mat> F;
  std::vector<Mat> G;
  double rhs = 0.0;
  std::string id;
};

namespace detail {

// Selector matrices over the lifted state (x; 1):
// S1 = [I_nx 0] extracts x, S2 = e_{nx} extracts the appended constant.
inline Mat sel_state(int nx) {
  Mat S = Mat::Zero(nx, nx + 1);
  S.topLeftCorner(nx, nx).setIdentity();
  return S;
}

inline Vec sel_one(int nx) {
  Vec e = Vec::Zero(nx + 1);
  e(nx) = 1.0;
  return e;
}

// Resolve the reference for mode j of a ball constraint: an explicit
// reference must lie strictly inside the ball (else ReferenceOutOfBall); the
// zero default falls back to the ball center when zero is not strictly
// inside.
inline Vec ball_ref(const BallConstraint& c, int j) {
  const int dim = static_cast<int>(c.center.size());
  if (!c.ref.empty()) {
    if (static_cast<int>(c.ref.size()) <= j)
      throw DimensionMismatch("ball constraint: ref has too few modes");
    const Vec& r = c.ref[j];
    if (r.size() != dim)
      throw DimensionMismatch("ball constraint: ref dimension mismatch");
    if ((r - c.center).norm() >= c.radius)
      throw ReferenceOutOfBall(
          "ball constraint at step " + std::to_string(c.step) + ", mode " +
          std::to_string(j) + ": ||ref - center|| = " +
          std::to_string((r - c.center).norm()) + " >= radius " +
          std::to_string(c.radius));
    return r;
  }
  Vec zero = Vec::Zero(dim);
  if (c.center.norm() >= c.radius) return c.center;  // zero not admissible
  return zero;
}

inline Vec half_ref(const HalfspaceConstraint& c, int j, int dim) {
  if (c.ref.empty()) return Vec::Zero(dim);
  if (static_cast<int>(c.ref.size()) <= j)
    throw DimensionMismatch("halfspace constraint: ref has too few modes");
  if (c.ref[j].size() != dim)
    throw DimensionMismatch("halfspace constraint: ref dimension mismatch");
  return c.ref[j];
}

}  // namespace detail

// Ball state surrogate (one row). With o_j = ref_j - center and
// denom_j = (radius - ||o_j||)^2:
//   E[j] = rho_s(j)/denom_j * (I_{nx+1} - 2 S2 ref_j' S1)
//   rhs  = eps - sum_j rho_s(j) (||ref_j||^2 - 1)/denom_j.
// eps is passed explicitly so iterative steering can scale it.
inline TraceConstraint build_ball_state(const BallConstraint& c,
                                        const Vec& rho_s, double eps,
                                        const std::string& id = "") {
  const int nx = static_cast<int>(c.center.size());
  const int n_modes = static_cast<int>(rho_s.size());
  const Mat S1 = detail::sel_state(nx);
  const Vec S2 = detail::sel_one(nx);
  TraceConstraint tc;
  tc.kind = TraceConstraint::Kind::state;
  tc.step = c.step;
  tc.id = id.empty() ? ("ball_state[k=" + std::to_string(c.step) + "]") : id;
  double rhs = eps;
  for (int j = 0; j < n_modes; ++j) {
    const Vec ref = detail::ball_ref(c, j);
    const double gap = c.radius - (ref - c.center).norm();
    if (!(gap > 0.0))
      throw ReferenceOutOfBall("ball state surrogate: reference on boundary");
    const double w = rho_s[j] / (gap * gap);
    Mat E = Mat::Identity(nx + 1, nx + 1);
    E -= 2.0 * S2 * ref.transpose() * S1;
    tc.E.push_back(w * E);
    rhs -= w * (ref.squaredNorm() - 1.0);
  }
  tc.rhs = rhs;
  return tc;
}

// Ball control surrogate (one row). With o_j = ref_j - center:
//   F[j] = rho_s(j)/denom_j * I_{nu}
//   G[j] = -2 rho_s(j)/denom_j * S2 ref_j'
//   rhs  = eps - sum_j rho_s(j) ||ref_j||^2 / denom_j.
inline TraceConstraint build_ball_control(const BallConstraint& c,
                                          const Vec& rho_s, double eps,
                                          int n_x, const std::string& id = "") {
  const int nu = static_cast<int>(c.center.size());
  const int n_modes = static_cast<int>(rho_s.size());
  const Vec S2 = detail::sel_one(n_x);
  TraceConstraint tc;
  tc.kind = TraceConstraint::Kind::control;
  tc.step = c.step;
  tc.id = id.empty() ? ("ball_control[k=" + std::to_string(c.step) + "]") : id;
  double rhs = eps;
  for (int j = 0; j < n_modes; ++j) {
    const Vec ref = detail::ball_ref(c, j);
    const double gap = c.radius - (ref - c.center).norm();
    if (!(gap > 0.0))
      throw ReferenceOutOfBall("ball control surrogate: reference on boundary");
    const double w = rho_s[j] / (gap * gap);
    tc.F.push_back(w * Mat::Identity(nu, nu));
    tc.G.push_back(-2.0 * w * S2 * ref.transpose());
    rhs -= w * ref.squaredNorm();
  }
  tc.rhs = rhs;
  return tc;
}

// Halfspace state surrogate: two rows per mode i (all other modes' blocks
// zero). The variance row is a one-sided concentration condition linearized
// around the per-mode reference mean; the mean row keeps the conditional
// mean on the feasible side so the concentration bound applies:
//   variance row: E[i] = (1-eps) S1'aa'S1 + 2 (eps b - ref_i'a) S2 a'S1,
//                 rhs  = eps b^2 - (a'ref_i)^2
//   mean row:     E[i] = S2 a'S1, rhs = b.
inline std::vector<TraceConstraint> build_half_state(
    const HalfspaceConstraint& c, int n_modes, double eps,
    const std::string& id = "") {
  const int nx = static_cast<int>(c.normal.size());
  const Mat S1 = detail::sel_state(nx);
  const Vec S2 = detail::sel_one(nx);
  const Vec& a = c.normal;
  const double b = c.offset;
  const std::string base =
      id.empty() ? ("half_state[k=" + std::to_string(c.step) + "]") : id;
  std::vector<TraceConstraint> rows;
  for (int i = 0; i < n_modes; ++i) {
    const Vec ref = detail::half_ref(c, i, nx);
    TraceConstraint var_row;
    var_row.kind = TraceConstraint::Kind::state;
    var_row.step = c.step;
    var_row.id = base + ":mode" + std::to_string(i) + ":var";
    var_row.E.assign(n_modes, Mat::Zero(nx + 1, nx + 1));
    var_row.E[i] = (1.0 - eps) * S1.transpose() * a * a.transpose() * S1 +
                   2.0 * (eps * b - ref.dot(a)) * S2 * a.transpose() * S1;
    var_row.rhs = eps * b * b - std::pow(a.dot(ref), 2);
    rows.push_back(std::move(var_row));

    TraceConstraint mean_row;
    mean_row.kind = TraceConstraint::Kind::state;
    mean_row.step = c.step;
    mean_row.id = base + ":mode" + std::to_string(i) + ":mean";
    mean_row.E.assign(n_modes, Mat::Zero(nx + 1, nx + 1));
    mean_row.E[i] = S2 * a.transpose() * S1;
    mean_row.rhs = b;
    rows.push_back(std::move(mean_row));
  }
  return rows;
}

// Halfspace control surrogate, mirroring build_half_state on (U, Y) blocks:
//   variance row: F[i] = (1-eps) aa', G[i] = 2 (eps b - ref_i'a) S2 a',
//                 rhs = eps b^2 - (a'ref_i)^2
//   mean row:     G[i] = S2 a', rhs = b.
inline std::vector<TraceConstraint> build_half_control(
    const HalfspaceConstraint& c, int n_modes, double eps, int n_x,
    const std::string& id = "") {
  const int nu = static_cast<int>(c.normal.size());
  const Vec S2 = detail::sel_one(n_x);
  const Vec& a = c.normal;
  const double b = c.offset;
  const std::string base =
      id.empty() ? ("half_control[k=" + std::to_string(c.step) + "]") : id;
  std::vector<TraceConstraint> rows;
  for (int i = 0; i < n_modes; ++i) {
    const Vec ref = detail::half_ref(c, i, nu);
    TraceConstraint var_row;
    var_row.kind = TraceConstraint::Kind::control;
    var_row.step = c.step;
    var_row.id = base + ":mode" + std::to_string(i) + ":var";
    var_row.F.assign(n_modes, Mat::Zero(nu, nu));
    var_row.G.assign(n_modes, Mat::Zero(n_x + 1, nu));
    var_row.F[i] = (1.0 - eps) * a * a.transpose();
    var_row.G[i] = 2.0 * (eps * b - ref.dot(a)) * S2 * a.transpose();
    var_row.rhs = eps * b * b - std::pow(a.dot(ref), 2);
    rows.push_back(std::move(var_row));

    TraceConstraint mean_row;
    mean_row.kind = TraceConstraint::Kind::control;
    mean_row.step = c.step;
    mean_row.id = base + ":mode" + std::to_string(i) + ":mean";
    mean_row.F.assign(n_modes, Mat::Zero(nu, nu));
    mean_row.G.assign(n_modes, Mat::Zero(n_x + 1, nu));
    mean_row.G[i] = S2 * a.transpose();
    mean_row.rhs = b;
    rows.push_back(std::move(mean_row));
  }
  return rows;
}

// Surrogate left-hand side of one row against a moment trajectory.
inline double evaluate(const TraceConstraint& tc, const MomentTrajectory& traj) {
  double lhs = 0.0;
  if (tc.kind == TraceConstraint::Kind::state) {
    for (size_t j = 0; j < tc.E.size(); ++j)
      lhs += (tc.E[j] * traj.I_bar[tc.step][j]).trace();
  } else {
    for (size_t j = 0; j < tc.F.size(); ++j)
      lhs += (tc.F[j] * traj.Y_bar[tc.step][j]).trace() +
             (tc.G[j] * traj.U_bar[tc.step][j]).trace();
  }
  return lhs;
}

// Surrogate objective for a ball reference at distance r from the center,
// given o = ||mu - center|| and c = E||y - center||^2:
//   phi(r) = (c - 2 o r + r^2) / (t - r)^2,  0 <= r < t.
inline double ball_reference_objective(double o_norm, double c, double t,
                                       double r) {
  return (c - 2.0 * o_norm * r + r * r) / ((t - r) * (t - r));
}

// Optimal ball reference update. Inputs are the conditional mean mu and the
// conditional second-moment trace tr(Theta) = E[||y||^2 | mode] of the
// constrained quantity at the constraint step. Minimizes phi along the ray
// from the center towards mu; outside the guarded region the center itself
// is the minimizer. The result is kept strictly inside the ball.
inline Vec update_ball_reference(const Vec& center, double t, const Vec& mu,
                                 double trace_theta) {
  const Vec o = mu - center;
  const double on = o.norm();
  const double c =
      trace_theta - 2.0 * mu.dot(center) + center.squaredNorm();
  if (!(on > 0.0) || !(on < t) || !(c < t * on)) return center;
  double r = (t * on - c) / (t - on);
  if (r <= 0.0) return center;
  const double rmax = (1.0 - 1e-9) * t;
  if (r > rmax) r = rmax;
  return center + (r / on) * o;
}

// Halfspace reference update: the surrogate is tightest (exactly the
// one-sided concentration bound) when the reference equals the current
// conditional mean, so the update is the identity on that mean.
inline Vec update_half_reference(const Vec& conditional_mean) {
  return conditional_mean;
}

}  // namespace mjls
