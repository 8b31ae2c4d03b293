#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <mjls/chance.hpp>
#include <mjls/model.hpp>
#include <mjls/moments.hpp>

#include "test_support.hpp"

using namespace mjls;
using testsup::mat2;
using testsup::vec2;

TEST_CASE("ball state surrogate row, default reference", "[chance]") {
  BallConstraint c;
  c.step = 3;
  c.center = Vec::Zero(2);
  c.radius = 1.0;
  c.eps = 0.05;
  const Vec rho = vec2(0.6, 0.4);
  const TraceConstraint tc = build_ball_state(c, rho, c.eps);

  REQUIRE(tc.kind == TraceConstraint::Kind::state);
  REQUIRE(tc.step == 3);
  REQUIRE(tc.E.size() == 2);
  // Zero reference is strictly inside, so each block is rho_j * I and the
  // right-hand side picks up the +1 from the lifted constant.
  CHECK(testsup::max_abs_diff(tc.E[0], 0.6 * Mat::Identity(3, 3)) < 1e-15);
  CHECK(testsup::max_abs_diff(tc.E[1], 0.4 * Mat::Identity(3, 3)) < 1e-15);
  CHECK(tc.rhs == Catch::Approx(1.05).margin(1e-15));
  CHECK(tc.id == "ball_state[k=3]");
}

TEST_CASE("ball state surrogate equals scaled expected squared distance",
          "[chance]") {
  // For any moments, lhs - rhs must equal
  //   sum_j rho_j E[||x - ref_j||^2 | j] / (radius - ||ref_j - center||)^2 - eps.
  testsup::Draw d(21);
  BallConstraint c;
  c.step = 0;
  c.center = vec2(0.3, -0.2);
  c.radius = 1.5;
  c.eps = 0.1;
  c.ref = {vec2(0.5, 0.0), vec2(0.1, 0.3)};
  const Vec rho = vec2(0.45, 0.55);
  const TraceConstraint tc = build_ball_state(c, rho, c.eps);

  MomentTrajectory traj;
  traj.I_bar.resize(1);
  std::vector<Vec> mu;
  std::vector<Mat> Sigma;
  for (int j = 0; j < 2; ++j) {
    mu.push_back(d.vector(2, 0.7));
    Sigma.push_back(d.spd(2, 0.05, 0.4));
    traj.I_bar[0].push_back(embed(mu[j], Sigma[j]));
  }
  double expect = -c.eps;
  for (int j = 0; j < 2; ++j) {
    const double gap = c.radius - (c.ref[j] - c.center).norm();
    const double mean_sq =
        Sigma[j].trace() + (mu[j] - c.ref[j]).squaredNorm();
    expect += rho[j] * mean_sq / (gap * gap);
  }
  CHECK(evaluate(tc, traj) - tc.rhs == Catch::Approx(expect).margin(1e-12));
}

TEST_CASE("ball control surrogate row", "[chance]") {
  BallConstraint c;
  c.step = 1;
  c.center = Vec::Zero(2);
  c.radius = 1.0;
  c.eps = 0.05;
  const Vec rho = vec2(0.6, 0.4);
  const TraceConstraint tc = build_ball_control(c, rho, c.eps, /*n_x=*/3);

  REQUIRE(tc.kind == TraceConstraint::Kind::control);
  REQUIRE(tc.F.size() == 2);
  REQUIRE(tc.G.size() == 2);
  CHECK(testsup::max_abs_diff(tc.F[0], 0.6 * Mat::Identity(2, 2)) < 1e-15);
  CHECK(testsup::max_abs_diff(tc.F[1], 0.4 * Mat::Identity(2, 2)) < 1e-15);
  CHECK(tc.G[0].cwiseAbs().maxCoeff() == 0.0);  // zero reference
  CHECK(tc.G[1].cwiseAbs().maxCoeff() == 0.0);
  CHECK(tc.rhs == Catch::Approx(0.05).margin(1e-15));
}

TEST_CASE("explicit ball references must lie strictly inside", "[chance]") {
  BallConstraint c;
  c.step = 0;
  c.center = Vec::Zero(2);
  c.radius = 1.0;
  c.eps = 0.05;
  c.ref = {vec2(2.0, 0.0), vec2(0.0, 0.0)};
  CHECK_THROWS_AS(build_ball_state(c, vec2(0.5, 0.5), c.eps),
                  ReferenceOutOfBall);

  // Default reference falls back to the center when zero is outside.
  BallConstraint far;
  far.step = 0;
  far.center = vec2(5.0, 0.0);
  far.radius = 1.0;
  far.eps = 0.05;
  const TraceConstraint tc = build_ball_state(far, Vec::Ones(1), far.eps);
  // With ref = center the linear term uses the center itself.
  Mat E = Mat::Identity(3, 3);
  E(2, 0) = -2.0 * 5.0;
  CHECK(testsup::max_abs_diff(tc.E[0], E) < 1e-15);
  CHECK(tc.rhs == Catch::Approx(0.05 - (25.0 - 1.0)).margin(1e-12));
}

TEST_CASE("halfspace control surrogate rows", "[chance]") {
  HalfspaceConstraint c;
  c.step = 2;
  c.normal = vec2(1.0, 0.0);
  c.offset = 2.0;
  c.eps = 0.02;
  const auto rows = build_half_control(c, /*n_modes=*/1, c.eps, /*n_x=*/2);
  REQUIRE(rows.size() == 2);

  const TraceConstraint& var = rows[0];
  Mat F_expect = Mat::Zero(2, 2);
  F_expect(0, 0) = 0.98;
  CHECK(testsup::max_abs_diff(var.F[0], F_expect) < 1e-15);
  Mat G_expect = Mat::Zero(3, 2);
  G_expect(2, 0) = 2.0 * (0.02 * 2.0);  // 2 (eps b - 0)
  CHECK(testsup::max_abs_diff(var.G[0], G_expect) < 1e-15);
  CHECK(var.rhs == Catch::Approx(0.02 * 4.0).margin(1e-15));
  CHECK(var.id == "half_control[k=2]:mode0:var");

  const TraceConstraint& mean = rows[1];
  CHECK(mean.F[0].cwiseAbs().maxCoeff() == 0.0);
  Mat Gm = Mat::Zero(3, 2);
  Gm(2, 0) = 1.0;
  CHECK(testsup::max_abs_diff(mean.G[0], Gm) < 1e-15);
  CHECK(mean.rhs == 2.0);
}

TEST_CASE("halfspace surrogate at the mean is the concentration bound",
          "[chance]") {
  // With the reference equal to the conditional mean, the variance row's
  // slack must equal (1-eps) a'Sigma a - eps (b - a'mu)^2 exactly.
  testsup::Draw d(33);
  for (int rep = 0; rep < 8; ++rep) {
    const Vec a = d.vector(2, 1.0);
    const double b = 2.0 + d.uniform();
    const double eps = 0.01 + 0.2 * d.uniform();
    const Vec mu = d.vector(2, 0.4);
    const Mat Sigma = d.spd(2, 0.02, 0.3);

    HalfspaceConstraint c;
    c.step = 0;
    c.normal = a;
    c.offset = b;
    c.eps = eps;
    c.ref = {mu};
    const auto rows = build_half_state(c, 1, eps);

    MomentTrajectory traj;
    traj.I_bar = {{embed(mu, Sigma)}};
    const double slack = evaluate(rows[0], traj) - rows[0].rhs;
    const double cantelli = (1.0 - eps) * a.dot(Sigma * a) -
                            eps * std::pow(b - a.dot(mu), 2);
    CHECK(slack == Catch::Approx(cantelli).margin(1e-9));

    // Mean row evaluates the conditional mean itself.
    CHECK(evaluate(rows[1], traj) == Catch::Approx(a.dot(mu)).margin(1e-12));
  }
}

TEST_CASE("halfspace surrogate away from the mean stays conservative",
          "[chance]") {
  // For any reference, slack >= the concentration value at the mean: the
  // linearized row is an outer bound that touches at ref = mean.
  testsup::Draw d(47);
  for (int rep = 0; rep < 8; ++rep) {
    const Vec a = d.vector(2, 1.0);
    const double b = 3.0 + d.uniform();
    const double eps = 0.05;
    const Vec mu = d.vector(2, 0.4);
    const Mat Sigma = d.spd(2, 0.02, 0.3);
    const Vec ref = mu + d.vector(2, 0.5);

    HalfspaceConstraint c;
    c.step = 0;
    c.normal = a;
    c.offset = b;
    c.eps = eps;

    MomentTrajectory traj;
    traj.I_bar = {{embed(mu, Sigma)}};

    c.ref = {mu};
    const auto at_mean = build_half_state(c, 1, eps);
    c.ref = {ref};
    const auto away = build_half_state(c, 1, eps);

    const double slack_mean = evaluate(at_mean[0], traj) - at_mean[0].rhs;
    const double slack_away = evaluate(away[0], traj) - away[0].rhs;
    CHECK(slack_away >= slack_mean - 1e-12);
  }
}

TEST_CASE("ball reference update closed form", "[chance]") {
  // Hand-checked instance: center 0, radius 1, mean (0.5, 0), E||y||^2 = 0.3
  // gives r* = (t on - c)/(t - on) = 0.4 and phi(0.4) = 1/6.
  const Vec ref =
      update_ball_reference(Vec::Zero(2), 1.0, vec2(0.5, 0.0), 0.3);
  CHECK(testsup::max_abs_diff(ref, vec2(0.4, 0.0)) < 1e-12);
  CHECK(ball_reference_objective(0.5, 0.3, 1.0, 0.4) ==
        Catch::Approx(1.0 / 6.0).margin(1e-12));
}

TEST_CASE("ball reference update beats a grid search", "[chance]") {
  testsup::Draw d(55);
  for (int rep = 0; rep < 20; ++rep) {
    const double t = 0.5 + 1.5 * d.uniform();
    const Vec center = d.vector(2, 0.5);
    const Vec mu = center + (0.2 + 0.7 * d.uniform()) * t *
                                Vec(vec2(std::cos(rep), std::sin(rep)));
    const Mat Sigma = d.spd(2, 0.005, 0.1);
    const double trace_theta = Sigma.trace() + mu.squaredNorm();

    const Vec ref = update_ball_reference(center, t, mu, trace_theta);
    const double on = (mu - center).norm();
    const double c =
        trace_theta - 2.0 * mu.dot(center) + center.squaredNorm();
    const double r_star = (ref - center).norm();
    REQUIRE(r_star < t);
    const double phi_star = ball_reference_objective(on, c, t, r_star);
    for (int g = 0; g <= 999; ++g) {
      const double r = (t * g) / 1000.0;
      CHECK(phi_star <= ball_reference_objective(on, c, t, r) + 1e-9);
    }
  }
}

TEST_CASE("ball reference update fallbacks", "[chance]") {
  const Vec center = vec2(1.0, 1.0);
  // Mean at the center: stay at the center.
  CHECK(testsup::max_abs_diff(
            update_ball_reference(center, 1.0, center, 2.5), center) == 0.0);
  // Mean outside the ball: fall back to the center.
  CHECK(testsup::max_abs_diff(
            update_ball_reference(center, 1.0, vec2(3.0, 1.0), 9.5), center) ==
        0.0);
  // Dispersion too large (c >= t*on): center again.
  CHECK(testsup::max_abs_diff(
            update_ball_reference(center, 1.0, vec2(1.5, 1.0), 10.0), center) ==
        0.0);
  // Positive dispersion pulls the minimizer inside the mean's offset:
  // r = on - sigma^2 / (t - on).
  {
    const Vec mu = vec2(1.99, 1.0);
    const double trace_theta = 1e-6 + mu.squaredNorm();
    const Vec ref = update_ball_reference(center, 1.0, mu, trace_theta);
    const double r = (ref - center).norm();
    CHECK(r == Catch::Approx(0.99 - 1e-6 / 0.01).margin(1e-12));
  }
  // Zero dispersion with the mean a hair inside the boundary: the closed-form
  // minimizer sits past the safety margin and is clamped strictly inside.
  {
    const Vec mu = vec2(1.0 + (1.0 - 1e-10), 1.0);
    const Vec ref = update_ball_reference(center, 1.0, mu, mu.squaredNorm());
    const double r = (ref - center).norm();
    CHECK(r < 1.0);
    CHECK(r == Catch::Approx(1.0 - 1e-9).margin(1e-12));
  }
}

TEST_CASE("halfspace reference default and update", "[chance]") {
  HalfspaceConstraint c;
  c.step = 0;
  c.normal = vec2(1.0, 0.0);
  c.offset = 1.0;
  c.eps = 0.05;
  const auto rows = build_half_state(c, 2, c.eps);
  // Default reference is zero: the variance row's linear term is 2 eps b.
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].E[0](2, 0) ==
        Catch::Approx(2.0 * c.eps * c.offset).margin(1e-15));
  CHECK(rows[0].rhs == Catch::Approx(c.eps).margin(1e-15));

  // Mismatched explicit reference dimensions are rejected.
  c.ref = {vec2(0.0, 0.0)};
  CHECK_THROWS_AS(build_half_state(c, 2, c.eps), DimensionMismatch);
  c.ref = {Vec::Zero(3), Vec::Zero(3)};
  CHECK_THROWS_AS(build_half_state(c, 2, c.eps), DimensionMismatch);

  const Vec mean = vec2(0.3, -0.7);
  CHECK(testsup::max_abs_diff(update_half_reference(mean), mean) == 0.0);
}
