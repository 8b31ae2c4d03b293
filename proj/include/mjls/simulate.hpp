#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "mjls/chance.hpp"
#include "mjls/controller.hpp"
#include "mjls/errors.hpp"
#include "mjls/linalg.hpp"
#include "mjls/model.hpp"
#include "mjls/rng.hpp"

namespace mjls {

enum class InitialDistribution { gaussian, uniform_ellipsoid };

inline const char* initial_distribution_name(InitialDistribution d) {
  return d == InitialDistribution::gaussian ? "gaussian" : "uniform_ellipsoid";
}

struct SimConfig {
  long samples = 100000;
  uint64_t seed = 0;
  double quantile = 0.05;              // level for the control quantile bands
  InitialDistribution initial = InitialDistribution::gaussian;
  bool record_quantiles = true;        // keep per-trajectory controls for quantiles.csv
  long record_trajectories = 0;        // leading trajectories kept for trajectories.csv
};

// Empirical conditional statistics for one (step, mode) cell.  Cells that no
// trajectory visited are absent from the report.
struct CellStats {
  long count = 0;
  Mat I_hat;      // empirical second moment of the lifted state (x; 1)
  Mat I_se;       // entrywise standard error of I_hat
  Vec mu_hat;
  Mat Sigma_hat;
};

struct ViolationStat {
  std::string id;
  long count = 0;     // trajectories violating the event
  double rate = 0.0;
  double se = 0.0;
};

struct RecordedStep {
  int step = 0;
  int mode = 0;
  Vec x;
  Vec u;  // empty at the terminal step
};

struct SimReport {
  long samples = 0;
  int horizon = 0;
  int n_modes = 0;
  int n_x = 0;
  int n_u = 0;
  double quantile = 0.0;
  std::vector<Vec> rho_hat;                                  // [k], size n_modes
  std::vector<std::vector<std::optional<CellStats>>> cells;  // [k][j]
  std::vector<ViolationStat> violations;                     // chance events in spec order
  double cost_mean = 0.0;
  double cost_se = 0.0;
  // [k][component] -> {lower, upper} empirical quantiles of the applied control.
  std::vector<std::vector<std::pair<double, double>>> control_quantiles;
  std::vector<std::vector<RecordedStep>> recorded;           // [trajectory][step]
};

inline std::pair<double, double> empirical_cost(const SimReport& rep) {
  return {rep.cost_mean, rep.cost_se};
}

namespace sim_detail {

constexpr long kBlock = 4096;  // trajectories per reduction block

struct BlockAccum {
  std::vector<std::vector<Mat>> sum;    // [k][j] lifted outer-product sums
  std::vector<std::vector<Mat>> sumsq;  // entrywise squares
  std::vector<std::vector<long>> count;
  std::vector<long> violations;
  double cost_sum = 0.0;
  double cost_sumsq = 0.0;

  BlockAccum(int T, int N, int nl, int n_events)
      : sum(T + 1, std::vector<Mat>(N, Mat::Zero(nl, nl))),
        sumsq(T + 1, std::vector<Mat>(N, Mat::Zero(nl, nl))),
        count(T + 1, std::vector<long>(N, 0)),
        violations(n_events, 0) {}
};

// One chance event flattened for trajectory-wise checking.
struct Event {
  bool on_state = true;
  bool is_ball = true;
  int step = 0;
  Vec center_or_normal;
  double radius_or_offset = 0.0;
  std::string id;
};

inline std::vector<Event> flatten_events(const ChanceSpec& chance) {
  std::vector<Event> ev;
  for (const auto& b : chance.ball_state)
    ev.push_back({true, true, b.step, b.center, b.radius,
                  "ball_state[k=" + std::to_string(b.step) + "]"});
  for (const auto& b : chance.ball_control)
    ev.push_back({false, true, b.step, b.center, b.radius,
                  "ball_control[k=" + std::to_string(b.step) + "]"});
  for (const auto& h : chance.half_state)
    ev.push_back({true, false, h.step, h.normal, h.offset,
                  "half_state[k=" + std::to_string(h.step) + "]"});
  for (const auto& h : chance.half_control)
    ev.push_back({false, false, h.step, h.normal, h.offset,
                  "half_control[k=" + std::to_string(h.step) + "]"});
  // Disambiguate repeated (kind, step) pairs so violations.csv keys are unique.
  for (size_t i = 0; i < ev.size(); ++i) {
    int dup = 0;
    for (size_t j = 0; j < i; ++j)
      if (ev[j].id == ev[i].id || ev[j].id.rfind(ev[i].id + "#", 0) == 0) ++dup;
    if (dup > 0) ev[i].id += "#" + std::to_string(dup);
  }
  return ev;
}

inline bool event_violated(const Event& e, const Vec& y) {
  if (e.is_ball) return (y - e.center_or_normal).norm() > e.radius_or_offset;
  return e.center_or_normal.dot(y) > e.radius_or_offset;
}

inline int pick_index(const Vec& weights, double u) {
  double acc = 0.0;
  const int n = static_cast<int>(weights.size());
  for (int i = 0; i < n; ++i) {
    acc += weights(i);
    if (u <= acc) return i;
  }
  return n - 1;
}

inline double draw(NoiseFamily family, uint64_t seed, uint64_t traj,
                   uint64_t step, Stream stream, uint64_t comp) {
  if (family == NoiseFamily::rademacher)
    return rademacher(seed, traj, step, stream, comp);
  return normal(seed, traj, step, stream, comp);
}

}  // namespace sim_detail

inline SimReport simulate(const MjlsModel& model, const BoundarySpec& boundary,
                          const Policy& policy, const ChanceSpec& chance,
                          const SimConfig& cfg, int threads = 1) {
  using sim_detail::BlockAccum;
  const int T = model.horizon;
  const int N = model.n_modes;
  const int nx = model.n_x;
  const int nu = model.n_u;
  const int nl = nx + 1;
  if (cfg.samples < 1) throw ConfigError("simulate: samples must be >= 1");
  if (policy.T != T || policy.n_modes != N || policy.n_x != nx || policy.n_u != nu)
    throw DimensionMismatch("simulate: policy dimensions do not match the model");
  if (threads < 1) threads = 1;

  const auto events = sim_detail::flatten_events(chance);
  // Per-step event index lists.
  std::vector<std::vector<int>> state_events(T + 1), control_events(T);
  for (size_t e = 0; e < events.size(); ++e) {
    const auto& ev = events[e];
    if (ev.on_state) {
      if (ev.step < 0 || ev.step > T)
        throw ConfigError("simulate: state chance event at step " +
                          std::to_string(ev.step) + " outside [0, T]");
      state_events[ev.step].push_back(static_cast<int>(e));
    } else {
      if (ev.step < 0 || ev.step >= T)
        throw ConfigError("simulate: control chance event at step " +
                          std::to_string(ev.step) + " outside [0, T)");
      control_events[ev.step].push_back(static_cast<int>(e));
    }
  }

  std::vector<Mat> L_in(N);
  for (int j = 0; j < N; ++j) L_in[j] = psd_sqrt(boundary.Sigma_in[j]);

  const long n_blocks = (cfg.samples + sim_detail::kBlock - 1) / sim_detail::kBlock;
  std::vector<BlockAccum> blocks;
  blocks.reserve(static_cast<size_t>(n_blocks));
  for (long b = 0; b < n_blocks; ++b)
    blocks.emplace_back(T, N, nl, static_cast<int>(events.size()));

  // Per-trajectory control slots for quantiles (written by trajectory index,
  // so the contents are independent of the thread schedule).
  std::vector<std::vector<double>> control_slots;
  if (cfg.record_quantiles && T > 0 && nu > 0)
    control_slots.assign(static_cast<size_t>(T) * nu,
                         std::vector<double>(static_cast<size_t>(cfg.samples)));

  const long n_recorded = std::min<long>(cfg.record_trajectories, cfg.samples);
  std::vector<std::vector<RecordedStep>> recorded(
      static_cast<size_t>(std::max<long>(n_recorded, 0)));

  const NoiseFamily family = model.noise_family;
  const uint64_t seed = cfg.seed;

  auto run_trajectory = [&](long t, BlockAccum& acc) {
    // Initial mode and state.
    const double u0 =
        uniform01(seed, static_cast<uint64_t>(t), 0, Stream::initial_mode, 0);
    int q = sim_detail::pick_index(model.rho0, u0);
    Vec z(nx);
    for (int c = 0; c < nx; ++c)
      z(c) = normal(seed, static_cast<uint64_t>(t), 0, Stream::initial_state,
                    static_cast<uint64_t>(c));
    Vec x;
    if (cfg.initial == InitialDistribution::gaussian) {
      x = boundary.mu_in[q] + L_in[q] * z;
    } else {
      const double ur = uniform01(seed, static_cast<uint64_t>(t), 0,
                                  Stream::initial_state,
                                  static_cast<uint64_t>(nx));
      const double radius =
          std::pow(ur, 1.0 / nx) * std::sqrt(static_cast<double>(nx) + 2.0);
      x = boundary.mu_in[q] + L_in[q] * (z.stableNormalized() * radius);
    }

    double cost = 0.0;
    std::vector<char> hit(events.size(), 0);
    Vec xt(nl), u(nu), xnext(nx);

    for (int k = 0; k <= T; ++k) {
      xt.head(nx) = x;
      xt(nx) = 1.0;
      acc.count[k][q] += 1;
      acc.sum[k][q].noalias() += xt * xt.transpose();
      acc.sumsq[k][q].array() += (xt * xt.transpose()).array().square();
      for (int e : state_events[k])
        if (sim_detail::event_violated(events[e], x)) hit[e] = 1;
      if (k == T) {
        if (t < n_recorded)
          recorded[t].push_back({k, q, x, Vec()});
        break;
      }

      // Control: feedback plus injected policy noise.
      u.noalias() = policy.K[k][q] * xt;
      {
        Vec znu(nu);
        for (int c = 0; c < nu; ++c)
          znu(c) = sim_detail::draw(family, seed, static_cast<uint64_t>(t),
                                    static_cast<uint64_t>(k),
                                    Stream::policy_noise,
                                    static_cast<uint64_t>(c));
        u.noalias() += policy.V_sqrt[k][q] * znu;
      }
      for (int e : control_events[k])
        if (sim_detail::event_violated(events[e], u)) hit[e] = 1;
      if (!control_slots.empty())
        for (int c = 0; c < nu; ++c)
          control_slots[static_cast<size_t>(k) * nu + c]
                       [static_cast<size_t>(t)] = u(c);
      if (t < n_recorded)
        recorded[t].push_back({k, q, x, u});

      cost += x.dot(model.Q[k][q] * x) + u.dot(model.R[k][q] * u);

      // State update.
      xnext.noalias() = model.A[k][q] * x;
      xnext.noalias() += model.B[k][q] * u;
      for (int r = 0; r < model.m_x; ++r) {
        const double xi = sim_detail::draw(family, seed, static_cast<uint64_t>(t),
                                           static_cast<uint64_t>(k),
                                           Stream::mult_state,
                                           static_cast<uint64_t>(r));
        xnext.noalias() += xi * (model.A_mult[k][q][r] * x);
      }
      for (int s = 0; s < model.m_u; ++s) {
        const double eta = sim_detail::draw(family, seed, static_cast<uint64_t>(t),
                                            static_cast<uint64_t>(k),
                                            Stream::mult_control,
                                            static_cast<uint64_t>(s));
        xnext.noalias() += eta * (model.B_mult[k][q][s] * u);
      }
      for (int c = 0; c < model.n_w; ++c) {
        const double w = sim_detail::draw(family, seed, static_cast<uint64_t>(t),
                                          static_cast<uint64_t>(k),
                                          Stream::additive,
                                          static_cast<uint64_t>(c));
        xnext.noalias() += w * model.D[k][q].col(c);
      }
      x = xnext;

      // Mode transition into step k+1.
      const double um = uniform01(seed, static_cast<uint64_t>(t),
                                  static_cast<uint64_t>(k),
                                  Stream::mode_transition, 0);
      q = sim_detail::pick_index(model.P[k].row(q).transpose(), um);
    }

    for (size_t e = 0; e < events.size(); ++e)
      if (hit[e]) acc.violations[e] += 1;
    acc.cost_sum += cost;
    acc.cost_sumsq += cost * cost;
  };

  auto run_block = [&](long b) {
    const long lo = b * sim_detail::kBlock;
    const long hi = std::min<long>(cfg.samples, lo + sim_detail::kBlock);
    for (long t = lo; t < hi; ++t) run_trajectory(t, blocks[b]);
  };

  if (threads == 1 || n_blocks == 1) {
    for (long b = 0; b < n_blocks; ++b) run_block(b);
  } else {
    std::vector<std::thread> pool;
    const int nthreads = static_cast<int>(std::min<long>(threads, n_blocks));
    pool.reserve(nthreads);
    for (int w = 0; w < nthreads; ++w)
      pool.emplace_back([&, w]() {
        for (long b = w; b < n_blocks; b += nthreads) run_block(b);
      });
    for (auto& th : pool) th.join();
  }

  // Deterministic reduction in ascending block order.
  BlockAccum total(T, N, nl, static_cast<int>(events.size()));
  for (long b = 0; b < n_blocks; ++b) {
    for (int k = 0; k <= T; ++k)
      for (int j = 0; j < N; ++j) {
        total.sum[k][j] += blocks[b].sum[k][j];
        total.sumsq[k][j] += blocks[b].sumsq[k][j];
        total.count[k][j] += blocks[b].count[k][j];
      }
    for (size_t e = 0; e < events.size(); ++e)
      total.violations[e] += blocks[b].violations[e];
    total.cost_sum += blocks[b].cost_sum;
    total.cost_sumsq += blocks[b].cost_sumsq;
  }

  SimReport rep;
  rep.samples = cfg.samples;
  rep.horizon = T;
  rep.n_modes = N;
  rep.n_x = nx;
  rep.n_u = nu;
  rep.quantile = cfg.quantile;
  rep.rho_hat.assign(T + 1, Vec::Zero(N));
  rep.cells.assign(T + 1, std::vector<std::optional<CellStats>>(N));
  const double dn = static_cast<double>(cfg.samples);
  for (int k = 0; k <= T; ++k)
    for (int j = 0; j < N; ++j) {
      const long n = total.count[k][j];
      rep.rho_hat[k](j) = static_cast<double>(n) / dn;
      if (n == 0) continue;
      CellStats cs;
      cs.count = n;
      cs.I_hat = total.sum[k][j] / static_cast<double>(n);
      if (n >= 2) {
        Mat var = (total.sumsq[k][j] -
                   static_cast<double>(n) * cs.I_hat.array().square().matrix())
                      .cwiseMax(0.0) /
                  static_cast<double>(n - 1);
        cs.I_se = (var / static_cast<double>(n)).cwiseSqrt();
      } else {
        cs.I_se = Mat::Constant(nl, nl, std::numeric_limits<double>::infinity());
      }
      cs.mu_hat = cs.I_hat.col(nx).head(nx);
      cs.Sigma_hat =
          cs.I_hat.topLeftCorner(nx, nx) - cs.mu_hat * cs.mu_hat.transpose();
      rep.cells[k][j] = std::move(cs);
    }

  rep.violations.resize(events.size());
  for (size_t e = 0; e < events.size(); ++e) {
    ViolationStat vs;
    vs.id = events[e].id;
    vs.count = total.violations[e];
    vs.rate = static_cast<double>(vs.count) / dn;
    vs.se = std::sqrt(std::max(vs.rate * (1.0 - vs.rate), 0.0) / dn);
    rep.violations[e] = std::move(vs);
  }

  rep.cost_mean = total.cost_sum / dn;
  if (cfg.samples >= 2) {
    const double var =
        std::max(total.cost_sumsq - dn * rep.cost_mean * rep.cost_mean, 0.0) /
        (dn - 1.0);
    rep.cost_se = std::sqrt(var / dn);
  }

  if (!control_slots.empty()) {
    rep.control_quantiles.assign(
        T, std::vector<std::pair<double, double>>(
               nu, {std::numeric_limits<double>::quiet_NaN(),
                    std::numeric_limits<double>::quiet_NaN()}));
    const double q = cfg.quantile;
    const long last = cfg.samples - 1;
    const long lo_idx = static_cast<long>(std::floor(q * static_cast<double>(last)));
    const long hi_idx = static_cast<long>(std::ceil((1.0 - q) * static_cast<double>(last)));
    for (int k = 0; k < T; ++k)
      for (int c = 0; c < nu; ++c) {
        auto& slot = control_slots[static_cast<size_t>(k) * nu + c];
        std::sort(slot.begin(), slot.end());
        rep.control_quantiles[k][c] = {slot[static_cast<size_t>(lo_idx)],
                                       slot[static_cast<size_t>(hi_idx)]};
      }
  }

  rep.recorded = std::move(recorded);
  return rep;
}

// ---------------------------------------------------------------------------
// CSV output.  All numbers are printed with %.17g so files are reproducible
// bit-for-bit for identical statistics.

namespace sim_detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

inline std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open output file: " + path);
  return out;
}

}  // namespace sim_detail

inline void write_trajectories_csv(const SimReport& rep, const std::string& path) {
  auto out = sim_detail::open_csv(path);
  out << "trajectory,k,mode";
  for (int c = 0; c < rep.n_x; ++c) out << ",x_" << c;
  for (int c = 0; c < rep.n_u; ++c) out << ",u_" << c;
  out << "\n";
  for (size_t t = 0; t < rep.recorded.size(); ++t)
    for (const auto& st : rep.recorded[t]) {
      out << t << "," << st.step << "," << st.mode;
      for (int c = 0; c < rep.n_x; ++c) out << "," << sim_detail::fmt(st.x(c));
      for (int c = 0; c < rep.n_u; ++c)
        out << "," << (st.u.size() > 0 ? sim_detail::fmt(st.u(c)) : std::string());
      out << "\n";
    }
}

inline void write_moments_csv(const SimReport& rep, const std::string& path) {
  auto out = sim_detail::open_csv(path);
  out << "k,j,count,rho_hat";
  for (int c = 0; c < rep.n_x; ++c) out << ",mu_" << c;
  for (int cc = 0; cc < rep.n_x; ++cc)
    for (int r = 0; r <= cc; ++r) out << ",sigma_" << r << "_" << cc;
  for (int cc = 0; cc < rep.n_x + 1; ++cc)
    for (int r = 0; r <= cc; ++r) out << ",se_" << r << "_" << cc;
  out << "\n";
  for (int k = 0; k < static_cast<int>(rep.cells.size()); ++k)
    for (int j = 0; j < rep.n_modes; ++j) {
      const auto& cell = rep.cells[k][j];
      if (!cell) continue;
      out << k << "," << j << "," << cell->count << ","
          << sim_detail::fmt(rep.rho_hat[k](j));
      for (int c = 0; c < rep.n_x; ++c)
        out << "," << sim_detail::fmt(cell->mu_hat(c));
      for (int cc = 0; cc < rep.n_x; ++cc)
        for (int r = 0; r <= cc; ++r)
          out << "," << sim_detail::fmt(cell->Sigma_hat(r, cc));
      for (int cc = 0; cc < rep.n_x + 1; ++cc)
        for (int r = 0; r <= cc; ++r)
          out << "," << sim_detail::fmt(cell->I_se(r, cc));
      out << "\n";
    }
}

inline void write_violations_csv(const SimReport& rep, const std::string& path) {
  auto out = sim_detail::open_csv(path);
  out << "id,rate,se,count,samples\n";
  for (const auto& v : rep.violations)
    out << v.id << "," << sim_detail::fmt(v.rate) << "," << sim_detail::fmt(v.se)
        << "," << v.count << "," << rep.samples << "\n";
}

inline void write_quantiles_csv(const SimReport& rep, const std::string& path) {
  auto out = sim_detail::open_csv(path);
  out << "k,component,lower,upper\n";
  for (int k = 0; k < static_cast<int>(rep.control_quantiles.size()); ++k)
    for (int c = 0; c < static_cast<int>(rep.control_quantiles[k].size()); ++c)
      out << k << "," << c << ","
          << sim_detail::fmt(rep.control_quantiles[k][c].first) << ","
          << sim_detail::fmt(rep.control_quantiles[k][c].second) << "\n";
}

}  // namespace mjls
