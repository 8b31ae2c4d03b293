// Command-line front end: validate problem files, solve the one-shot moment
// program, run the iterative chance-constrained steering loop, and Monte
// Carlo a saved policy.
//
// Exit codes: 0 success, 1 infeasible / failed validation / no realizable
// policy, 2 usage or configuration errors.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mjls/config_io.hpp"
#include "mjls/mjls.hpp"

namespace {

namespace fs = std::filesystem;

void write_json_file(const nlohmann::json& j, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw mjls::ConfigError("cannot open output file: " + path);
  out << j.dump(2) << "\n";
}

void print_solve_diagnostics(const mjls::SolveResult& res) {
  std::printf("status:     %s\n", mjls::solve_status_name(res.status));
  std::printf("backend:    %s (%d iterations)\n", res.backend.c_str(),
              res.iterations);
  if (!res.message.empty()) std::printf("note:       %s\n", res.message.c_str());
  if (res.status != mjls::SolveResult::Status::optimal) return;
  std::printf("objective:  %.12g\n", res.objective);
  for (const auto& [group, resid] : res.equality_residuals)
    std::printf("residual[%s]: %.3e\n", group.c_str(), resid);
  std::printf("min cone eigenvalue: %.3e\n", res.min_psd_eig);
  std::printf("worst chance-row violation: %.3e\n", res.chance_violation);
}

int run_validate(const std::string& path) {
  const mjls::ProblemConfig cfg = mjls::load_problem(path);
  const mjls::ValidationReport rep = mjls::validate(cfg.model, cfg.boundary);
  if (!rep.ok()) {
    for (const auto& p : rep.problems) std::printf("problem: %s\n", p.c_str());
    std::printf("invalid: %zu problem(s) found\n", rep.problems.size());
    return 1;
  }
  std::printf(
      "ok: horizon=%d modes=%d n_x=%d n_u=%d n_w=%d m_x=%d m_u=%d terminal=%s\n",
      cfg.model.horizon, cfg.model.n_modes, cfg.model.n_x, cfg.model.n_u,
      cfg.model.n_w, cfg.model.m_x, cfg.model.m_u,
      mjls::terminal_kind_name(cfg.boundary.kind));
  std::printf("chance entries: ball_state=%zu ball_control=%zu half_state=%zu "
              "half_control=%zu\n",
              cfg.chance.ball_state.size(), cfg.chance.ball_control.size(),
              cfg.chance.half_state.size(), cfg.chance.half_control.size());
  return 0;
}

// Override the terminal moment requirement in place, broadcasting or
// truncating the target entries as needed.
void apply_terminal_kind(mjls::BoundarySpec& boundary, int n_modes,
                         const std::string& kind_name) {
  const mjls::TerminalKind kind = [&] {
    if (kind_name == "unconditional_equality")
      return mjls::TerminalKind::unconditional_equality;
    if (kind_name == "unconditional_upper_bound")
      return mjls::TerminalKind::unconditional_upper_bound;
    if (kind_name == "modewise_equality")
      return mjls::TerminalKind::modewise_equality;
    if (kind_name == "modewise_upper_bound")
      return mjls::TerminalKind::modewise_upper_bound;
    throw mjls::ConfigError("unknown terminal kind: " + kind_name);
  }();
  const size_t want = mjls::terminal_is_modewise(kind) ? n_modes : 1;
  boundary.kind = kind;
  if (boundary.mu_out.size() != want) {
    if (boundary.mu_out.empty())
      throw mjls::ConfigError("terminal override: no terminal moments given");
    boundary.mu_out.resize(want, boundary.mu_out[0]);
    boundary.Sigma_out.resize(want, boundary.Sigma_out[0]);
  }
}

int run_solve(const std::string& path, const std::string& out_policy,
              const std::string& out_moments, const std::string& dump_program,
              const std::string& terminal_kind) {
  mjls::ProblemConfig cfg = mjls::load_problem(path);
  if (!terminal_kind.empty())
    apply_terminal_kind(cfg.boundary, cfg.model.n_modes, terminal_kind);
  const mjls::ValidationReport rep = mjls::validate(cfg.model, cfg.boundary);
  if (!rep.ok()) {
    for (const auto& p : rep.problems)
      std::fprintf(stderr, "problem: %s\n", p.c_str());
    return 1;
  }
  const auto rhos = mjls::mode_priors(cfg.model);
  const auto rows = mjls::build_chance_rows(cfg.model, rhos, cfg.chance, 1.0);
  const auto ap = mjls::assemble(cfg.model, cfg.boundary, rows);
  if (!dump_program.empty())
    write_json_file(mjls::program_to_json(ap), dump_program);
  const mjls::SolveResult res = mjls::solve(ap);
  print_solve_diagnostics(res);
  if (res.status != mjls::SolveResult::Status::optimal) return 1;

  const mjls::Policy pol = mjls::extract(res.trajectory);
  const double lossless = mjls::losslessness_residual(
      res.trajectory, pol, mjls::lift(cfg.model),
      mjls::backward_transitions(cfg.model));
  std::printf("losslessness residual: %.3e\n", lossless);
  if (!out_policy.empty()) {
    write_json_file(mjls::policy_to_json(pol), out_policy);
    std::printf("policy written to %s\n", out_policy.c_str());
  }
  if (!out_moments.empty()) {
    write_json_file(mjls::trajectory_to_json(res.trajectory), out_moments);
    std::printf("moments written to %s\n", out_moments.c_str());
  }
  return 0;
}

int run_steer(const std::string& path, const std::string& out_dir) {
  const mjls::ProblemConfig cfg = mjls::load_problem(path);
  const mjls::ValidationReport rep = mjls::validate(cfg.model, cfg.boundary);
  if (!rep.ok()) {
    for (const auto& p : rep.problems)
      std::fprintf(stderr, "problem: %s\n", p.c_str());
    return 1;
  }
  mjls::SteerResult result;
  try {
    result = mjls::steer_iterative(cfg.model, cfg.boundary, cfg.chance,
                                   cfg.schedule);
  } catch (const mjls::NoFeasibleIterate& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  for (const auto& it : result.iterations) {
    std::printf("m=%d gamma=%g status=%s", it.m, it.gamma,
                mjls::solve_status_name(it.status));
    if (it.status == mjls::SolveResult::Status::optimal)
      std::printf(" objective=%.12g", it.objective);
    std::printf("\n");
  }
  if (!result.warning.empty())
    std::printf("warning: %s\n", result.warning.c_str());
  std::printf("final policy from iteration %d\n", result.last_optimal_m);

  fs::create_directories(out_dir);
  mjls::write_steer_artifacts(result, out_dir);
  write_json_file(mjls::policy_to_json(result.policy),
                  (fs::path(out_dir) / "policy.json").string());
  write_json_file(mjls::trajectory_to_json(result.solution.trajectory),
                  (fs::path(out_dir) / "moments.json").string());
  std::printf("artifacts written to %s\n", out_dir.c_str());
  return 0;
}

int run_simulate(const std::string& path, const std::string& policy_path,
                 std::optional<long> samples, std::optional<uint64_t> seed,
                 std::optional<double> quantile, std::optional<long> record,
                 const std::string& out_dir, int threads) {
  const mjls::ProblemConfig cfg = mjls::load_problem(path);
  const mjls::ValidationReport rep = mjls::validate(cfg.model, cfg.boundary);
  if (!rep.ok()) {
    for (const auto& p : rep.problems)
      std::fprintf(stderr, "problem: %s\n", p.c_str());
    return 1;
  }
  const mjls::Policy pol = mjls::load_policy(policy_path);
  mjls::SimConfig sim = cfg.sim;
  if (samples) sim.samples = *samples;
  if (seed) sim.seed = *seed;
  if (quantile) sim.quantile = *quantile;
  if (record) sim.record_trajectories = *record;

  const mjls::SimReport report =
      mjls::simulate(cfg.model, cfg.boundary, pol, cfg.chance, sim, threads);

  fs::create_directories(out_dir);
  mjls::write_moments_csv(report, (fs::path(out_dir) / "moments.csv").string());
  mjls::write_violations_csv(report,
                             (fs::path(out_dir) / "violations.csv").string());
  mjls::write_quantiles_csv(report,
                            (fs::path(out_dir) / "quantiles.csv").string());
  if (sim.record_trajectories > 0)
    mjls::write_trajectories_csv(
        report, (fs::path(out_dir) / "trajectories.csv").string());
  write_json_file(mjls::report_summary_json(report),
                  (fs::path(out_dir) / "summary.json").string());

  std::printf("samples: %ld (seed %llu, %d thread(s))\n", report.samples,
              static_cast<unsigned long long>(sim.seed), threads);
  std::printf("empirical cost: %.6g +/- %.3g (1 SE)\n", report.cost_mean,
              report.cost_se);
  for (const auto& v : report.violations)
    std::printf("violation[%s]: %.5f +/- %.5f\n", v.id.c_str(), v.rate, v.se);
  std::printf("outputs written to %s\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Finite-horizon covariance steering for Markov jump linear systems "
      "with multiplicative noise"};
  app.require_subcommand(1);

  std::string v_path;
  auto* v = app.add_subcommand("validate",
                               "Check a problem file and report every issue");
  v->add_option("problem", v_path, "problem JSON file")->required();

  std::string s_path, s_out, s_moments, s_dump, s_terminal;
  auto* s = app.add_subcommand(
      "solve", "Solve the one-shot moment program (chance rows at nominal eps)");
  s->add_option("problem", s_path, "problem JSON file")->required();
  s->add_option("--out", s_out, "write the extracted policy JSON here");
  s->add_option("--moments", s_moments, "write the moment trajectory JSON here");
  s->add_option("--dump-program", s_dump, "write the assembled conic program here");
  s->add_option("--terminal-kind", s_terminal,
                "override the terminal requirement kind");

  std::string t_path, t_dir = "steer_out";
  auto* t = app.add_subcommand(
      "steer", "Run the iterative chance-constraint tightening loop");
  t->add_option("problem", t_path, "problem JSON file")->required();
  t->add_option("--out-dir", t_dir, "artifact directory (default steer_out)");

  std::string m_path, m_policy, m_dir = "sim_out";
  std::optional<long> m_samples, m_record;
  std::optional<uint64_t> m_seed;
  std::optional<double> m_quantile;
  int m_threads = 1;
  auto* mc = app.add_subcommand("simulate",
                                "Monte Carlo a saved policy against the model");
  mc->add_option("problem", m_path, "problem JSON file")->required();
  mc->add_option("--policy", m_policy, "policy JSON (from solve/steer)")
      ->required();
  mc->add_option("--samples", m_samples, "trajectory count");
  mc->add_option("--seed", m_seed, "base seed");
  mc->add_option("--quantile", m_quantile, "quantile level for control bands");
  mc->add_option("--record-trajectories", m_record,
                 "leading trajectories to write to trajectories.csv");
  mc->add_option("--out-dir", m_dir, "output directory (default sim_out)");
  mc->add_option("--threads", m_threads, "worker threads (output is identical)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*v) return run_validate(v_path);
    if (*s) return run_solve(s_path, s_out, s_moments, s_dump, s_terminal);
    if (*t) return run_steer(t_path, t_dir);
    if (*mc)
      return run_simulate(m_path, m_policy, m_samples, m_seed, m_quantile,
                          m_record, m_dir, m_threads);
  } catch (const mjls::ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const mjls::BackendFailure& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const mjls::DimensionMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const mjls::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "unexpected error: %s\n", e.what());
    return 1;
  }
  return 2;
}
