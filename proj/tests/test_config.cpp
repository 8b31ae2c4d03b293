// Unit tests for JSON problem parsing (including the bundled example files),
// policy serialization round trips, report/program dumps, and the exit-code
// contract of the command-line tool.
#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>
#include <vector>

#include <mjls/config_io.hpp>
#include <mjls/sdp.hpp>

#include "test_support.hpp"

namespace {

std::string repo(const std::string& rel) {
  return std::string(MJLS_REPO_DIR) + "/" + rel;
}

void require_same_model(const mjls::MjlsModel& got, const mjls::MjlsModel& want) {
  REQUIRE(got.horizon == want.horizon);
  REQUIRE(got.n_modes == want.n_modes);
  REQUIRE(got.n_x == want.n_x);
  REQUIRE(got.n_u == want.n_u);
  REQUIRE(got.n_w == want.n_w);
  REQUIRE(got.m_x == want.m_x);
  REQUIRE(got.m_u == want.m_u);
  REQUIRE(got.noise_family == want.noise_family);
  REQUIRE(got.rho0.size() == want.rho0.size());
  REQUIRE((got.rho0 - want.rho0).cwiseAbs().maxCoeff() < 1e-15);
  for (int k = 0; k < want.horizon; ++k) {
    REQUIRE(testsup::max_abs_diff(got.P[k], want.P[k]) < 1e-15);
    for (int j = 0; j < want.n_modes; ++j) {
      REQUIRE(testsup::max_abs_diff(got.A[k][j], want.A[k][j]) < 1e-15);
      REQUIRE(testsup::max_abs_diff(got.B[k][j], want.B[k][j]) < 1e-15);
      REQUIRE(testsup::max_abs_diff(got.D[k][j], want.D[k][j]) < 1e-15);
      REQUIRE(testsup::max_abs_diff(got.Q[k][j], want.Q[k][j]) < 1e-15);
      REQUIRE(testsup::max_abs_diff(got.R[k][j], want.R[k][j]) < 1e-15);
      REQUIRE(got.A_mult[k][j].size() == want.A_mult[k][j].size());
      REQUIRE(got.B_mult[k][j].size() == want.B_mult[k][j].size());
      for (size_t r = 0; r < want.A_mult[k][j].size(); ++r)
        REQUIRE(testsup::max_abs_diff(got.A_mult[k][j][r], want.A_mult[k][j][r]) <
                1e-15);
      for (size_t r = 0; r < want.B_mult[k][j].size(); ++r)
        REQUIRE(testsup::max_abs_diff(got.B_mult[k][j][r], want.B_mult[k][j][r]) <
                1e-15);
    }
  }
}

void require_same_boundary(const mjls::BoundarySpec& got,
                           const mjls::BoundarySpec& want) {
  REQUIRE(got.kind == want.kind);
  REQUIRE(got.mu_in.size() == want.mu_in.size());
  REQUIRE(got.mu_out.size() == want.mu_out.size());
  for (size_t j = 0; j < want.mu_in.size(); ++j) {
    REQUIRE((got.mu_in[j] - want.mu_in[j]).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE(testsup::max_abs_diff(got.Sigma_in[j], want.Sigma_in[j]) < 1e-15);
  }
  for (size_t j = 0; j < want.mu_out.size(); ++j) {
    REQUIRE((got.mu_out[j] - want.mu_out[j]).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE(testsup::max_abs_diff(got.Sigma_out[j], want.Sigma_out[j]) < 1e-15);
  }
}

// Minimal scalar two-mode problem used as the mutation base for error-path
// and shorthand tests.
nlohmann::json base_problem() {
  return nlohmann::json::parse(R"({
    "model": {
      "horizon": 3, "n_modes": 2, "n_x": 1, "n_u": 1, "n_w": 1,
      "A": [[[0.5]], [[2.0]]],
      "B": [[[1.0]], [[1.0]]],
      "D": [[[0.1]], [[0.2]]],
      "Q": [[[1.0]], [[1.0]]],
      "R": [[[1.0]], [[1.0]]],
      "P": [[0.5, 0.5], [0.5, 0.5]],
      "rho0": [1.0, 0.0]
    },
    "boundary": {
      "initial": {"mu": [0.0], "Sigma": [[1.0]]},
      "terminal": {"kind": "unconditional_equality", "mu": [0.0], "Sigma": [[1.0]]}
    }
  })");
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(MJLS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("bundled example files parse to the reference instances", "[config]") {
  SECTION("noise-injection example") {
    const mjls::ProblemConfig cfg = mjls::load_problem(repo("examples/remark3.json"));
    require_same_model(cfg.model, testsup::noise_injection_model());
    require_same_boundary(cfg.boundary, testsup::noise_injection_boundary());
    REQUIRE(cfg.chance.empty());
    REQUIRE(cfg.schedule.gammas == std::vector<double>{1.0});  // default
    REQUIRE(cfg.sim.samples == 100000);
    REQUIRE(cfg.sim.seed == 1);
    REQUIRE(mjls::validate(cfg.model, cfg.boundary).ok());
  }

  SECTION("planar two-mode example") {
    const mjls::ProblemConfig cfg = mjls::load_problem(repo("examples/mjls2d.json"));
    require_same_model(cfg.model, testsup::planar_model());
    require_same_boundary(cfg.boundary, testsup::planar_boundary());
    REQUIRE(cfg.chance.empty());
    REQUIRE(cfg.sim.samples == 100000);
    REQUIRE(cfg.sim.seed == 1);
    REQUIRE(mjls::validate(cfg.model, cfg.boundary).ok());
  }

  SECTION("fixed-schedule ball variant") {
    const mjls::ProblemConfig cfg =
        mjls::load_problem(repo("examples/mjls2d_fixed_gamma.json"));
    require_same_model(cfg.model, testsup::planar_model());
    require_same_boundary(cfg.boundary, testsup::planar_boundary());
    REQUIRE(cfg.schedule.gammas == std::vector<double>(10, 1.0));
    REQUIRE(cfg.chance.ball_state.size() == 1);
    REQUIRE(cfg.chance.ball_control.empty());
    REQUIRE(cfg.chance.half_state.empty());
    REQUIRE(cfg.chance.half_control.empty());
    const mjls::BallConstraint& b = cfg.chance.ball_state[0];
    REQUIRE(b.step == 6);
    REQUIRE((b.center - testsup::vec2(0.5, 1.0)).cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE(b.radius == 0.6);
    REQUIRE(b.eps == 0.05);
    REQUIRE(b.ref.empty());
  }

  SECTION("reducing-schedule halfspace variant") {
    const mjls::ProblemConfig cfg =
        mjls::load_problem(repo("examples/mjls2d_reduced_gamma.json"));
    require_same_model(cfg.model, testsup::planar_model());
    REQUIRE(cfg.schedule.gammas == std::vector<double>{32, 16, 8, 4, 2, 1});

    REQUIRE(cfg.chance.ball_state.size() == 1);
    REQUIRE(cfg.chance.ball_state[0].step == 6);

    // One halfspace block over steps 2..10 expands to nine per-step entries.
    REQUIRE(cfg.chance.half_state.size() == 9);
    for (int i = 0; i < 9; ++i) {
      const mjls::HalfspaceConstraint& h = cfg.chance.half_state[i];
      REQUIRE(h.step == i + 2);
      REQUIRE((h.normal - testsup::vec2(-1.0, 0.0)).cwiseAbs().maxCoeff() < 1e-15);
      REQUIRE(h.offset == 0.0);
      REQUIRE(h.eps == 0.05);
    }

    // Two symmetric control bounds over steps 0..9 expand to twenty entries:
    // the +e1 block first, then the -e1 block.
    REQUIRE(cfg.chance.half_control.size() == 20);
    for (int i = 0; i < 20; ++i) {
      const mjls::HalfspaceConstraint& h = cfg.chance.half_control[i];
      const double sign = i < 10 ? 1.0 : -1.0;
      REQUIRE(h.step == i % 10);
      REQUIRE((h.normal - sign * testsup::vec2(1.0, 0.0)).cwiseAbs().maxCoeff() <
              1e-15);
      REQUIRE(h.offset == 9.0);
      REQUIRE(h.eps == 0.05);
    }
  }

  SECTION("hedging example") {
    const mjls::ProblemConfig cfg = mjls::load_problem(repo("examples/hedging.json"));
    const mjls::MjlsModel& m = cfg.model;
    REQUIRE(m.horizon == 5);
    REQUIRE(m.n_modes == 2);
    REQUIRE(m.n_x == 2);
    REQUIRE(m.n_u == 2);
    REQUIRE(m.n_w == 2);
    REQUIRE(m.m_x == 2);
    REQUIRE(m.m_u == 2);
    REQUIRE(m.noise_family == mjls::NoiseFamily::gaussian);
    REQUIRE(mjls::validate(m, cfg.boundary).ok());

    for (int k = 0; k < m.horizon; ++k) {
      REQUIRE(testsup::max_abs_diff(m.A[k][0], testsup::mat2(1, 0, 0, 0.9)) < 1e-15);
      REQUIRE(testsup::max_abs_diff(m.A[k][1], testsup::mat2(1, 0, 0, 0.8)) < 1e-15);
      REQUIRE(testsup::max_abs_diff(m.B[k][0], testsup::mat2(1, 0.2, 0, 1)) < 1e-15);
      REQUIRE(testsup::max_abs_diff(m.B[k][1], testsup::mat2(0.8, 0.1, 0, 0.8)) <
              1e-15);
      REQUIRE(testsup::max_abs_diff(m.D[k][0],
                                    0.1 * mjls::Mat::Identity(2, 2)) < 1e-15);
      REQUIRE(testsup::max_abs_diff(m.D[k][1],
                                    0.2 * mjls::Mat::Identity(2, 2)) < 1e-15);
      REQUIRE(m.A_mult[k][0].size() == 2);
      REQUIRE(testsup::max_abs_diff(m.A_mult[k][0][0], testsup::mat2(0.02, 0, 0, 0)) <
              1e-15);
      REQUIRE(testsup::max_abs_diff(m.A_mult[k][1][1], testsup::mat2(0, 0, 0, 0.03)) <
              1e-15);
      REQUIRE(testsup::max_abs_diff(m.B_mult[k][0][1], testsup::mat2(0, 0.01, 0, 0.02)) <
              1e-15);
      REQUIRE(testsup::max_abs_diff(m.B_mult[k][1][0], testsup::mat2(0.03, 0, 0, 0)) <
              1e-15);
      REQUIRE(testsup::max_abs_diff(m.Q[k][0],
                                    0.1 * mjls::Mat::Identity(2, 2)) < 1e-15);
      REQUIRE(testsup::max_abs_diff(m.R[k][1],
                                    0.1 * mjls::Mat::Identity(2, 2)) < 1e-15);
      REQUIRE(testsup::max_abs_diff(m.P[k], testsup::mat2(0.95, 0.05, 0.3, 0.7)) <
              1e-15);
    }
    REQUIRE((m.rho0 - testsup::vec2(0.5, 0.5)).cwiseAbs().maxCoeff() < 1e-15);

    REQUIRE(cfg.boundary.kind == mjls::TerminalKind::unconditional_upper_bound);
    REQUIRE(cfg.boundary.mu_in.size() == 2);
    for (int j = 0; j < 2; ++j) {
      REQUIRE((cfg.boundary.mu_in[j] - testsup::vec2(-2, 2)).cwiseAbs().maxCoeff() <
              1e-15);
      REQUIRE(testsup::max_abs_diff(cfg.boundary.Sigma_in[j],
                                    0.1 * mjls::Mat::Identity(2, 2)) < 1e-15);
    }
    REQUIRE(cfg.boundary.mu_out.size() == 1);
    REQUIRE(cfg.boundary.mu_out[0].cwiseAbs().maxCoeff() < 1e-15);
    REQUIRE(testsup::max_abs_diff(cfg.boundary.Sigma_out[0],
                                  0.02 * mjls::Mat::Identity(2, 2)) < 1e-15);

    // Four axis bounds on state and control, each over steps 1..4.
    REQUIRE(cfg.chance.half_state.size() == 16);
    REQUIRE(cfg.chance.half_control.size() == 16);
    const std::vector<mjls::Vec> dirs = {
        testsup::vec2(1, 0), testsup::vec2(-1, 0), testsup::vec2(0, 1),
        testsup::vec2(0, -1)};
    for (int e = 0; e < 4; ++e)
      for (int s = 0; s < 4; ++s) {
        const mjls::HalfspaceConstraint& hs = cfg.chance.half_state[4 * e + s];
        REQUIRE(hs.step == s + 1);
        REQUIRE((hs.normal - dirs[e]).cwiseAbs().maxCoeff() < 1e-15);
        REQUIRE(hs.offset == 3.5);
        REQUIRE(hs.eps == 0.02);
        const mjls::HalfspaceConstraint& hc = cfg.chance.half_control[4 * e + s];
        REQUIRE(hc.step == s + 1);
        REQUIRE((hc.normal - dirs[e]).cwiseAbs().maxCoeff() < 1e-15);
        REQUIRE(hc.offset == 2.0);
        REQUIRE(hc.eps == 0.02);
      }
    REQUIRE(cfg.schedule.gammas == std::vector<double>{64, 32, 16, 8, 4, 2, 1});
  }
}

TEST_CASE("shorthand fields expand as documented", "[config]") {
  SECTION("a single matrix per mode is held constant over the horizon") {
    const mjls::ProblemConfig cfg = mjls::parse_problem(base_problem());
    REQUIRE(cfg.model.A.size() == 3);
    for (int k = 0; k < 3; ++k) {
      REQUIRE(cfg.model.A[k][0](0, 0) == 0.5);
      REQUIRE(cfg.model.A[k][1](0, 0) == 2.0);
      REQUIRE(cfg.model.D[k][1](0, 0) == 0.2);
    }
    // m_x/m_u default to zero: every multiplicative channel list is empty.
    for (int k = 0; k < 3; ++k)
      for (int j = 0; j < 2; ++j) {
        REQUIRE(cfg.model.A_mult[k][j].empty());
        REQUIRE(cfg.model.B_mult[k][j].empty());
      }
    REQUIRE(cfg.model.noise_family == mjls::NoiseFamily::gaussian);
  }

  SECTION("per-step lists override per mode independently") {
    nlohmann::json j = base_problem();
    j["model"]["A"][0] = nlohmann::json::parse("[[[0.5]], [[0.6]], [[0.7]]]");
    const mjls::ProblemConfig cfg = mjls::parse_problem(j);
    REQUIRE(cfg.model.A[0][0](0, 0) == 0.5);
    REQUIRE(cfg.model.A[1][0](0, 0) == 0.6);
    REQUIRE(cfg.model.A[2][0](0, 0) == 0.7);
    for (int k = 0; k < 3; ++k) REQUIRE(cfg.model.A[k][1](0, 0) == 2.0);
  }

  SECTION("per-step transition matrices") {
    nlohmann::json j = base_problem();
    j["model"]["P"] = nlohmann::json::parse(
        "[[[1.0, 0.0], [0.0, 1.0]], [[0.5, 0.5], [0.5, 0.5]], [[0.0, 1.0], [1.0, 0.0]]]");
    const mjls::ProblemConfig cfg = mjls::parse_problem(j);
    REQUIRE(cfg.model.P.size() == 3);
    REQUIRE(cfg.model.P[0](0, 0) == 1.0);
    REQUIRE(cfg.model.P[1](0, 1) == 0.5);
    REQUIRE(cfg.model.P[2](0, 1) == 1.0);
  }

  SECTION("initial moments broadcast over modes; explicit lists are kept") {
    const mjls::ProblemConfig bc = mjls::parse_problem(base_problem());
    REQUIRE(bc.boundary.mu_in.size() == 2);
    REQUIRE(bc.boundary.mu_in[0](0) == 0.0);
    REQUIRE(bc.boundary.mu_in[1](0) == 0.0);
    REQUIRE(bc.boundary.Sigma_in[1](0, 0) == 1.0);

    nlohmann::json j = base_problem();
    j["boundary"]["initial"]["mu"] = nlohmann::json::parse("[[0.0], [3.0]]");
    const mjls::ProblemConfig cfg = mjls::parse_problem(j);
    REQUIRE(cfg.boundary.mu_in[0](0) == 0.0);
    REQUIRE(cfg.boundary.mu_in[1](0) == 3.0);
  }

  SECTION("terminal entry count follows the kind") {
    const mjls::ProblemConfig un = mjls::parse_problem(base_problem());
    REQUIRE(un.boundary.mu_out.size() == 1);

    nlohmann::json j = base_problem();
    j["boundary"]["terminal"]["kind"] = "modewise_equality";
    const mjls::ProblemConfig mw = mjls::parse_problem(j);
    REQUIRE(mw.boundary.kind == mjls::TerminalKind::modewise_equality);
    REQUIRE(mw.boundary.mu_out.size() == 2);  // broadcast to every mode
    REQUIRE(mw.boundary.Sigma_out.size() == 2);
  }

  SECTION("constraint step forms: scalar, list, inclusive range") {
    nlohmann::json j = base_problem();
    j["chance"]["ball_state"] = nlohmann::json::parse(
        R"([{"step": 2, "center": [0.0], "radius": 1.0, "eps": 0.1}])");
    j["chance"]["ball_control"] = nlohmann::json::parse(
        R"([{"steps": [3, 1, 3], "center": [0.0], "radius": 2.0, "eps": 0.2}])");
    j["chance"]["half_state"] = nlohmann::json::parse(
        R"([{"steps": {"from": 1, "to": 3}, "normal": [1.0], "offset": 5.0, "eps": 0.1}])");
    const mjls::ProblemConfig cfg = mjls::parse_problem(j);

    REQUIRE(cfg.chance.ball_state.size() == 1);
    REQUIRE(cfg.chance.ball_state[0].step == 2);

    // Explicit lists keep order and multiplicity; entries share the geometry.
    REQUIRE(cfg.chance.ball_control.size() == 3);
    REQUIRE(cfg.chance.ball_control[0].step == 3);
    REQUIRE(cfg.chance.ball_control[1].step == 1);
    REQUIRE(cfg.chance.ball_control[2].step == 3);
    for (const auto& b : cfg.chance.ball_control) {
      REQUIRE(b.radius == 2.0);
      REQUIRE(b.eps == 0.2);
    }

    REQUIRE(cfg.chance.half_state.size() == 3);
    for (int i = 0; i < 3; ++i) REQUIRE(cfg.chance.half_state[i].step == i + 1);
  }

  SECTION("reference points broadcast over modes") {
    nlohmann::json j = base_problem();
    j["chance"]["half_control"] = nlohmann::json::parse(
        R"([{"step": 0, "normal": [1.0], "offset": 5.0, "eps": 0.1, "ref": [0.5]}])");
    j["chance"]["ball_state"] = nlohmann::json::parse(
        R"([{"step": 1, "center": [0.0], "radius": 1.0, "eps": 0.1,
             "ref": [[0.1], [0.2]]}])");
    const mjls::ProblemConfig cfg = mjls::parse_problem(j);
    REQUIRE(cfg.chance.half_control[0].ref.size() == 2);
    REQUIRE(cfg.chance.half_control[0].ref[0](0) == 0.5);
    REQUIRE(cfg.chance.half_control[0].ref[1](0) == 0.5);
    REQUIRE(cfg.chance.ball_state[0].ref.size() == 2);
    REQUIRE(cfg.chance.ball_state[0].ref[1](0) == 0.2);
  }

  SECTION("rademacher noise family") {
    nlohmann::json j = base_problem();
    j["model"]["noise_family"] = "rademacher";
    REQUIRE(mjls::parse_problem(j).model.noise_family ==
            mjls::NoiseFamily::rademacher);
  }
}

TEST_CASE("malformed problem JSON is rejected", "[config]") {
  using Catch::Matchers::ContainsSubstring;
  auto expect_fail = [](nlohmann::json j, const std::string& needle) {
    REQUIRE_THROWS_MATCHES(mjls::parse_problem(j), mjls::ConfigError,
                           Catch::Matchers::MessageMatches(ContainsSubstring(needle)));
  };

  expect_fail(nlohmann::json::object(), "missing \"model\"");

  {
    nlohmann::json j = base_problem();
    j.erase("boundary");
    expect_fail(j, "missing \"boundary\"");
  }
  {
    nlohmann::json j = base_problem();
    j["model"]["horizon"] = 0;
    expect_fail(j, "horizon must be >= 1");
  }
  {
    nlohmann::json j = base_problem();
    j["model"]["horizon"] = 2.5;
    expect_fail(j, "missing integer \"horizon\"");
  }
  {
    nlohmann::json j = base_problem();
    j["model"]["noise_family"] = "weibull";
    expect_fail(j, "noise_family");
  }
  {
    nlohmann::json j = base_problem();
    j["model"]["A"] = nlohmann::json::parse("[[[0.5]]]");  // one mode, need two
    expect_fail(j, "one entry per mode");
  }
  {
    nlohmann::json j = base_problem();
    j["model"]["A"][0] = nlohmann::json::parse("[[[0.5]], [[0.6]]]");  // horizon 3
    expect_fail(j, "per-step list must have horizon entries");
  }
  {
    nlohmann::json j = base_problem();
    j["model"]["B"][1] = nlohmann::json::parse("[[1.0], [2.0, 3.0]]");
    expect_fail(j, "ragged matrix rows");
  }
  {
    nlohmann::json j = base_problem();
    j["model"]["P"] = nlohmann::json::parse("[0.5, 0.5]");
    expect_fail(j, "model.P");
  }
  {
    nlohmann::json j = base_problem();
    j["model"].erase("rho0");
    expect_fail(j, "missing \"rho0\"");
  }
  {
    nlohmann::json j = base_problem();
    // Multiplicative entries with a zero channel count are contradictory.
    j["model"]["A_mult"] = nlohmann::json::parse("[[[[0.1]]], [[[0.1]]]]");
    expect_fail(j, "channel count is 0");
  }
  {
    nlohmann::json j = base_problem();
    j["boundary"]["terminal"]["kind"] = "gaussian";
    expect_fail(j, "unknown terminal kind");
  }
  {
    nlohmann::json j = base_problem();
    j["boundary"]["initial"].erase("Sigma");
    expect_fail(j, "needs \"mu\" and \"Sigma\"");
  }
  {
    nlohmann::json j = base_problem();
    j["chance"]["ball_state"] = nlohmann::json::parse(
        R"([{"step": 1, "steps": [1], "center": [0.0], "radius": 1.0, "eps": 0.1}])");
    expect_fail(j, "exactly one of \"step\" or \"steps\"");
  }
  {
    nlohmann::json j = base_problem();
    j["chance"]["ball_state"] = nlohmann::json::parse(
        R"([{"steps": {"from": 3, "to": 1}, "center": [0.0], "radius": 1.0, "eps": 0.1}])");
    expect_fail(j, "to < from");
  }
  {
    nlohmann::json j = base_problem();
    j["chance"]["ball_state"] = nlohmann::json::parse(
        R"([{"step": 1, "center": [0.0], "eps": 0.1}])");
    expect_fail(j, "needs \"center\", \"radius\", \"eps\"");
  }
  {
    nlohmann::json j = base_problem();
    j["chance"]["half_state"] = nlohmann::json::parse(
        R"([{"step": 1, "normal": [1.0], "eps": 0.1}])");
    expect_fail(j, "needs \"normal\", \"offset\", \"eps\"");
  }
  {
    nlohmann::json j = base_problem();
    j["schedule"]["gammas"] = nlohmann::json::array();
    expect_fail(j, "non-empty \"gammas\"");
  }
  {
    nlohmann::json j = base_problem();
    j["schedule"]["gammas"] = nlohmann::json::parse("[2.0, 0.0]");
    expect_fail(j, "must be positive");
  }
  {
    nlohmann::json j = base_problem();
    j["sim"]["initial"] = "cauchy";
    expect_fail(j, "uniform_ellipsoid");
  }
}

TEST_CASE("load_problem wraps file and JSON failures in ConfigError", "[config]") {
  using Catch::Matchers::ContainsSubstring;
  REQUIRE_THROWS_MATCHES(
      mjls::load_problem("/nonexistent/nope.json"), mjls::ConfigError,
      Catch::Matchers::MessageMatches(ContainsSubstring("cannot open")));

  const std::string bad = "/tmp/mjls_cfg_not_json.json";
  {
    std::ofstream out(bad);
    out << "{ this is not json";
  }
  REQUIRE_THROWS_MATCHES(
      mjls::load_problem(bad), mjls::ConfigError,
      Catch::Matchers::MessageMatches(ContainsSubstring("invalid JSON")));

  const std::string semantic = "/tmp/mjls_cfg_semantic.json";
  {
    std::ofstream out(semantic);
    out << "{\"model\": {}}";
  }
  REQUIRE_THROWS_AS(mjls::load_problem(semantic), mjls::ConfigError);
}

TEST_CASE("policy serialization round-trips", "[config]") {
  const mjls::MjlsModel m = testsup::random_small_model(77, mjls::NoiseFamily::gaussian);
  const mjls::Policy pol = testsup::random_policy(m, 78);

  const nlohmann::json j = mjls::policy_to_json(pol);
  REQUIRE(j["horizon"] == pol.T);
  REQUIRE(j["n_modes"] == pol.n_modes);
  REQUIRE(j["n_x"] == pol.n_x);
  REQUIRE(j["n_u"] == pol.n_u);
  REQUIRE(!j.contains("V_sqrt"));  // derived data is rebuilt, never stored

  // Through a file, as the CLI does it.
  const std::string path = "/tmp/mjls_cfg_policy.json";
  {
    std::ofstream out(path);
    out << j.dump(2) << "\n";
  }
  const mjls::Policy back = mjls::load_policy(path);
  REQUIRE(back.T == pol.T);
  REQUIRE(back.n_modes == pol.n_modes);
  REQUIRE(back.n_x == pol.n_x);
  REQUIRE(back.n_u == pol.n_u);
  for (int k = 0; k < pol.T; ++k)
    for (int q = 0; q < pol.n_modes; ++q) {
      REQUIRE(testsup::max_abs_diff(back.K[k][q], pol.K[k][q]) < 1e-15);
      REQUIRE(testsup::max_abs_diff(back.V[k][q], pol.V[k][q]) < 1e-15);
      // The factor is rebuilt with the same eigendecomposition convention, so
      // a reloaded policy drives the simulator with identical noise draws.
      REQUIRE(testsup::max_abs_diff(back.V_sqrt[k][q], pol.V_sqrt[k][q]) < 1e-12);
      REQUIRE(testsup::max_abs_diff(
                  back.V_sqrt[k][q] * back.V_sqrt[k][q].transpose(),
                  back.V[k][q]) < 1e-12);
    }
}

TEST_CASE("policy JSON rejection and clipping rules", "[config]") {
  // 1 step, 1 mode, scalar control.
  auto one_v = [](double v) {
    nlohmann::json j;
    j["horizon"] = 1;
    j["n_modes"] = 1;
    j["n_x"] = 1;
    j["n_u"] = 1;
    j["K"] = nlohmann::json::parse("[[[[0.0, 0.0]]]]");
    j["V"] = nlohmann::json::array({nlohmann::json::array(
        {nlohmann::json::array({nlohmann::json::array({v})})})});
    return j;
  };

  SECTION("missing required keys") {
    nlohmann::json j = one_v(1.0);
    j.erase("K");
    REQUIRE_THROWS_AS(mjls::policy_from_json(j), mjls::ConfigError);
  }
  SECTION("horizon/mode shape mismatches") {
    nlohmann::json j = one_v(1.0);
    j["horizon"] = 2;  // K/V only carry one step
    REQUIRE_THROWS_AS(mjls::policy_from_json(j), mjls::ConfigError);
  }
  SECTION("slightly negative noise variance clips to zero") {
    const mjls::Policy pol = mjls::policy_from_json(one_v(-5e-9));
    REQUIRE(pol.V_sqrt[0][0](0, 0) == 0.0);
  }
  SECTION("clearly negative noise variance is not realizable") {
    REQUIRE_THROWS_AS(mjls::policy_from_json(one_v(-1e-6)), mjls::NotRealizable);
  }
}

TEST_CASE("trajectory, report, and program dumps carry the right shape",
          "[config]") {
  const mjls::MjlsModel m = testsup::noise_injection_model();
  const mjls::BoundarySpec b = testsup::noise_injection_boundary();

  SECTION("moment trajectory") {
    mjls::Policy pol;
    pol.T = 1;
    pol.n_modes = 1;
    pol.n_x = 2;
    pol.n_u = 1;
    pol.K = {{mjls::Mat::Zero(1, 3)}};
    pol.V = {{mjls::Mat::Identity(1, 1)}};
    pol.V_sqrt = pol.V;
    const mjls::MomentTrajectory traj = testsup::propagate_policy(m, b, pol);
    const nlohmann::json j = mjls::trajectory_to_json(traj);
    REQUIRE(j["I_bar"].size() == 2);  // states live on 0..T
    REQUIRE(j["U_bar"].size() == 1);
    REQUIRE(j["Y_bar"].size() == 1);
    REQUIRE(j["I_bar"][0][0].size() == 3);          // (n_x+1) rows
    REQUIRE(j["I_bar"][0][0][2][2].get<double>() == 1.0);
    REQUIRE(j["Y_bar"][0][0][0][0].get<double>() == 1.0);
  }

  SECTION("simulation summary") {
    mjls::SimReport rep;
    rep.samples = 100;
    rep.cost_mean = 2.5;
    rep.cost_se = 0.1;
    mjls::ViolationStat v;
    v.id = "ball_state[k=1]";
    v.count = 20;
    v.rate = 0.2;
    v.se = 0.04;
    rep.violations.push_back(v);
    const nlohmann::json j = mjls::report_summary_json(rep);
    REQUIRE(j["samples"] == 100);
    REQUIRE(j["cost_mean"] == 2.5);
    REQUIRE(j["violations"].size() == 1);
    REQUIRE(j["violations"][0]["id"] == "ball_state[k=1]");
    REQUIRE(j["violations"][0]["rate"] == 0.2);
    REQUIRE(j["violations"][0]["count"] == 20);
  }

  SECTION("assembled program") {
    const mjls::AssembledProgram ap = mjls::assemble(m, b, {});
    const nlohmann::json j = mjls::program_to_json(ap);
    REQUIRE(j["num_vars"] == 16);
    REQUIRE(j["terminal"] == "unconditional_equality");
    REQUIRE(j["blocks"].size() == 4);
    REQUIRE(j["c"].size() == 16);
    REQUIRE(j["equalities"].size() == 17);
    REQUIRE(j["inequalities"].empty());
    REQUIRE(j["memberships"].size() == 4);
  }
}

TEST_CASE("command-line exit codes", "[config][cli]") {
  SECTION("validate accepts every bundled example") {
    for (const char* name :
         {"remark3.json", "mjls2d.json", "mjls2d_fixed_gamma.json",
          "mjls2d_reduced_gamma.json", "hedging.json"}) {
      REQUIRE(run_cli("validate " + repo(std::string("examples/") + name)) == 0);
    }
  }

  SECTION("usage errors exit 2, --help exits 0") {
    REQUIRE(run_cli("") == 2);                  // missing subcommand
    REQUIRE(run_cli("frobnicate x.json") == 2); // unknown subcommand
    REQUIRE(run_cli("validate") == 2);          // missing required argument
    REQUIRE(run_cli("--help") == 0);
  }

  SECTION("configuration errors exit 2") {
    REQUIRE(run_cli("validate /nonexistent/nope.json") == 2);
    const std::string bad = "/tmp/mjls_cfg_cli_bad.json";
    {
      std::ofstream out(bad);
      out << "{ not json";
    }
    REQUIRE(run_cli("validate " + bad) == 2);
    REQUIRE(run_cli("simulate " + repo("examples/remark3.json") +
                    " --policy /nonexistent/pol.json --out-dir /tmp/mjls_cfg_sim") ==
            2);
  }

  SECTION("semantically invalid models exit 1 from validate") {
    nlohmann::json j = base_problem();
    j["model"]["rho0"] = nlohmann::json::parse("[0.6, 0.6]");  // not a distribution
    const std::string path = "/tmp/mjls_cfg_cli_invalid_model.json";
    {
      std::ofstream out(path);
      out << j.dump();
    }
    REQUIRE(run_cli("validate " + path) == 1);
  }

  SECTION("unknown backend exits 2") {
    const int rc = std::system(
        ("MJLS_BACKEND=bogus " + std::string(MJLS_CLI_PATH) + " solve " +
         repo("examples/remark3.json") + " > /dev/null 2>&1")
            .c_str());
    REQUIRE(WIFEXITED(rc));
    REQUIRE(WEXITSTATUS(rc) == 2);
  }

  SECTION("solve writes a loadable policy and moment trajectory") {
    const std::string pol_path = "/tmp/mjls_cfg_cli_policy.json";
    const std::string mom_path = "/tmp/mjls_cfg_cli_moments.json";
    REQUIRE(run_cli("solve " + repo("examples/remark3.json") + " --out " +
                    pol_path + " --moments " + mom_path) == 0);
    const mjls::Policy pol = mjls::load_policy(pol_path);
    REQUIRE(pol.T == 1);
    REQUIRE(pol.n_modes == 1);
    REQUIRE(pol.n_u == 1);
    // The noise-injection instance forces unit policy noise and zero gain.
    REQUIRE(pol.K[0][0].cwiseAbs().maxCoeff() < 1e-4);
    REQUIRE(pol.V[0][0](0, 0) == Catch::Approx(1.0).margin(1e-4));

    std::ifstream in(mom_path);
    REQUIRE(in.good());
    nlohmann::json traj;
    in >> traj;
    REQUIRE(traj["I_bar"].size() == 2);
    REQUIRE(traj["I_bar"][1][0][0][0].get<double>() ==
            Catch::Approx(2.0).margin(1e-5));
  }

  SECTION("infeasible instances exit 1 from solve") {
    // Shrinking the terminal covariance below the injected noise floor makes
    // the equality target unreachable.
    nlohmann::json j;
    {
      std::ifstream in(repo("examples/remark3.json"));
      in >> j;
    }
    j["boundary"]["terminal"]["Sigma"] =
        nlohmann::json::parse("[[0.5, 0.0], [0.0, 0.5]]");
    const std::string path = "/tmp/mjls_cfg_cli_infeasible.json";
    {
      std::ofstream out(path);
      out << j.dump();
    }
    REQUIRE(run_cli("solve " + path) == 1);
  }
}
