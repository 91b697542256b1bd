#pragma once

#include <sclf/artifact.hpp>
#include <sclf/basis.hpp>
#include <sclf/care.hpp>
#include <sclf/dynamics.hpp>
#include <sclf/expert.hpp>
#include <sclf/online.hpp>
#include <sclf/silp.hpp>
#include <sclf/sim.hpp>
#include <sclf/types.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace sclf {

// Exit codes: 0 ok, 2 unverified, 3 infeasible LP, 64 usage/config.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUnverified = 2;
inline constexpr int kExitInfeasible = 3;
inline constexpr int kExitUsage = 64;

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Shared assembly

struct Pipeline {
  RunConfig cfg;
  ControlAffineSystem sys;
  QuadraticCost cost;
  CareSolution care;
  TerminalIngredients term;
  std::unique_ptr<ExpertController> expert;  // synthesis horizon
};

inline Json load_config_json(const std::filesystem::path& path,
                             std::optional<std::uint64_t> seed_override) {
  Json j = read_json_file(path);
  if (seed_override) {
    const std::uint64_t s = *seed_override;
    if (j.contains("basis")) j["basis"]["seed"] = s;
    if (j.contains("synth")) j["synth"]["seed"] = s + 1;
    if (j.contains("sim") && !j["sim"].contains("x0_set")) j["sim"]["x0_seed"] = s + 2;
  }
  return j;
}

inline Pipeline build_pipeline(const Json& config_json) {
  Pipeline p;
  p.cfg = parse_run_config(config_json);
  p.sys = make_system(p.cfg);
  if (p.cfg.q_diag.size() != p.sys.n || p.cfg.r_diag.size() != p.sys.m)
    throw ConfigError("cost diagonals do not match the system dimensions");
  p.cost = QuadraticCost::diagonal(p.cfg.q_diag, p.cfg.r_diag);
  const auto [abar, bbar] = linearize(p.sys);
  p.care = solve_care(abar, bbar, p.cost.Q, p.cost.R);
  p.term.S = p.care.S;
  p.term.K = p.care.K;
  p.term.kappa = compute_terminal_region(p.sys, p.cost, p.care.S, p.care.K);
  p.expert = std::make_unique<ExpertController>(p.sys, p.cost, p.term, p.cfg.ocp);
  return p;
}

inline BasisSet build_basis(const Pipeline& p) {
  const std::vector<double> scales =
      p.cfg.basis_scales.empty() ? default_scales(p.sys.domain) : p.cfg.basis_scales;
  return generate_basis(p.sys.n, p.care.S, p.cfg.basis_directions, scales, p.cfg.basis_p,
                        p.cfg.basis_seed);
}

// Smallest V on the domain boundary, sampled per face; initial states are
// pulled into a sublevel set below it so closed-loop runs stay inside the
// certified region.
inline double boundary_min_v(const BasisSet& basis, const Coefficients& alpha,
                             const DomainBox& domain, int per_face = 256,
                             std::uint64_t seed = 0xb0a7) {
  Rng rng(seed);
  double vmin = std::numeric_limits<double>::infinity();
  for (int i = 0; i < domain.dim(); ++i) {
    for (const bool upper : {false, true}) {
      for (int s = 0; s < per_face; ++s) {
        Vec x = domain.sample(rng);
        x[i] = upper ? domain.hi[i] : domain.lo[i];
        vmin = std::min(vmin, eval_V(basis, alpha, x));
      }
    }
  }
  return vmin;
}

inline std::vector<Vec> sample_initial_states(const BasisSet& basis, const Coefficients& alpha,
                                              const DomainBox& domain, int count,
                                              std::uint64_t seed, double sublevel_frac) {
  const double v_cap = sublevel_frac * boundary_min_v(basis, alpha, domain);
  Rng rng(seed);
  std::vector<Vec> out;
  out.reserve(count);
  while (static_cast<int>(out.size()) < count) {
    Vec x = domain.sample(rng);
    if (x.norm() < 1e-9) continue;
    if (eval_V(basis, alpha, x) > v_cap) {
      double lo = 0.0, hi = 1.0;
      for (int it = 0; it < 60; ++it) {
        const double mid = 0.5 * (lo + hi);
        (eval_V(basis, alpha, mid * x) > v_cap ? hi : lo) = mid;
      }
      x *= lo;
    }
    out.push_back(x);
  }
  return out;
}

inline std::vector<Vec> initial_states_from_config(const SimSection& sim, const BasisSet& basis,
                                                   const Coefficients& alpha,
                                                   const DomainBox& domain) {
  if (!sim.x0_set.empty()) return sim.x0_set;
  return sample_initial_states(basis, alpha, domain, sim.x0_count, sim.x0_seed, sim.x0_sublevel);
}

// ---------------------------------------------------------------------------
// Fresh certificate audit (random sweep plus a maximizer run)

struct AuditResult {
  double max_omega = -std::numeric_limits<double>::infinity();
  Vec worst_x;
  int points = 0;
};

inline AuditResult audit_certificate(const BasisSet& basis, const Coefficients& alpha,
                                     const ExpertController& expert, const QuadraticCost& cost,
                                     const DomainBox& domain, int audit_points, std::uint64_t seed,
                                     const SearchConfig& search,
                                     const std::vector<Vec>& hint_points = {}) {
  AuditResult res;
  res.worst_x = Vec::Zero(domain.dim());
  Rng rng(seed);
  {
    auto ses = expert.session();
    for (int i = 0; i < audit_points; ++i) {
      const Vec x = domain.sample(rng);
      const double om = omega_condition(basis, alpha, x, ses, cost);
      if (om > res.max_omega) {
        res.max_omega = om;
        res.worst_x = x;
      }
    }
    res.points = audit_points;
  }
  SearchConfig sc = search;
  sc.seed = rng.next_u64();
  const auto [x_star, omega_star] =
      max_violation(basis, alpha, expert, cost, domain, sc, hint_points);
  if (omega_star > res.max_omega) {
    res.max_omega = omega_star;
    res.worst_x = x_star;
  }
  return res;
}

// ---------------------------------------------------------------------------
// CSV writers

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj,
                                 int n, int m) {
  std::ostringstream os;
  os << "t";
  for (int i = 1; i <= n; ++i) os << ",x" << i;
  for (int i = 1; i <= m; ++i) os << ",u" << i;
  os << ",theta,V,cost\n";
  for (std::size_t k = 0; k < traj.size(); ++k) {
    os << detail::fmt_double(traj.times[k]);
    for (int i = 0; i < n; ++i) os << "," << detail::fmt_double(traj.states[k][i]);
    for (int i = 0; i < m; ++i) os << "," << detail::fmt_double(traj.inputs[k][i]);
    os << "," << detail::fmt_double(k < traj.theta.size() ? traj.theta[k] : 0.0);
    os << "," << detail::fmt_double(k < traj.v_values.size() ? traj.v_values[k] : 0.0);
    os << "," << detail::fmt_double(k < traj.cost_cum.size() ? traj.cost_cum[k] : 0.0);
    os << "\n";
  }
  write_file_atomic(path, os.str());
}

inline void write_synthesis_csv(const std::filesystem::path& path, const SynthesisReport& rep) {
  std::ostringstream os;
  os << "iteration,omega_star,lp_objective,wall_s\n";
  for (std::size_t i = 0; i < rep.omega_star_trace.size(); ++i) {
    os << i << "," << detail::fmt_double(rep.omega_star_trace[i]) << ","
       << detail::fmt_double(i < rep.lp_objective_trace.size() ? rep.lp_objective_trace[i] : 0.0)
       << "," << detail::fmt_double(i < rep.wall_time_s.size() ? rep.wall_time_s[i] : 0.0) << "\n";
  }
  write_file_atomic(path, os.str());
}

// ---------------------------------------------------------------------------
// synth

inline int cmd_synth(const std::filesystem::path& config_path, const std::filesystem::path& out_dir,
                     std::optional<std::uint64_t> seed_override = std::nullopt,
                     std::ostream& log = std::cout) {
  Json config_json;
  std::optional<Pipeline> pipe;
  try {
    config_json = load_config_json(config_path, seed_override);
    pipe = build_pipeline(config_json);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  Pipeline& p = *pipe;
  std::filesystem::create_directories(out_dir);

  const BasisSet basis = build_basis(p);
  log << "system " << p.sys.name << ": n=" << p.sys.n << " m=" << p.sys.m
      << ", basis N=" << basis.size() << ", kappa=" << p.term.kappa << "\n";

  SynthesisOutcome outcome =
      cutting_plane_synthesize(basis, *p.expert, p.cost, p.sys.domain, p.cfg.synth);
  log << "synthesis: " << to_string(outcome.report.status) << " after "
      << outcome.report.iterations << " iterations, final omega* = "
      << outcome.report.final_omega_star << "\n";

  if (outcome.report.status == SynthStatus::InfeasibleLp) {
    std::cerr << "LP infeasible; conflicting rows (grid indices):";
    for (int r : outcome.report.infeasible_rows) std::cerr << " " << r;
    std::cerr << "\nconsider enlarging the basis (more directions or scales)\n";
    write_synthesis_csv(out_dir / "synthesis_trace.csv", outcome.report);
    return kExitInfeasible;
  }

  // Prune with certificate-preserving rollback.
  PruneResult pruned;
  try {
    SearchConfig sc = p.cfg.synth.search;
    sc.seed = Rng(p.cfg.synth.seed ^ 0x9e3779b9).next_u64();
    pruned = prune_verified(outcome.alpha, p.cfg.eps_n, basis, *p.expert, p.cost, p.sys.domain, sc,
                            outcome.report.tol_viol, outcome.report.cut_points);
  } catch (const AllPruned& e) {
    std::cerr << "prune: " << e.what() << "\n";
    return kExitUnverified;
  }
  outcome.report.pruned_count = static_cast<int>(pruned.kept_indices.size());
  outcome.report.eps_n = p.cfg.eps_n;
  log << "prune: " << outcome.report.pruned_count << " of " << basis.size()
      << " coefficients kept (eps_n=" << p.cfg.eps_n << ")\n";

  // Fresh audit at seeded points plus an independent maximizer run.
  const double verified_tol = 10.0 * outcome.report.tol_viol;
  const std::uint64_t audit_seed = p.cfg.synth.seed ^ 0xad17ad17ull;
  const AuditResult audit =
      audit_certificate(basis, pruned.alpha, *p.expert, p.cost, p.sys.domain, 1000, audit_seed,
                        p.cfg.synth.search, outcome.report.cut_points);
  const bool verified =
      outcome.report.status == SynthStatus::Verified && audit.max_omega <= verified_tol;
  log << "audit: max omega = " << audit.max_omega << " over " << audit.points
      << " fresh points + maximizer (gate " << verified_tol << ") -> "
      << (verified ? "verified" : "UNVERIFIED") << "\n";

  SclfArtifact a;
  a.system_name = p.sys.name;
  a.system_fingerprint = fingerprint_hex(p.sys);
  a.q_diag = p.cfg.q_diag;
  a.r_diag = p.cfg.r_diag;
  a.ocp = p.cfg.ocp;
  a.terminal = p.term;
  a.basis = basis;
  a.alpha = pruned.alpha;
  a.kept_indices = pruned.kept_indices;
  a.eps_n = p.cfg.eps_n;
  a.report = outcome.report;
  a.verified_tol = verified_tol;
  a.audit_points = audit.points;
  a.max_audit_omega = audit.max_omega;
  a.audit_seed = audit_seed;
  a.verified = verified;
  a.config_echo = config_json;

  save_artifact(a, out_dir / "artifact.json");
  write_synthesis_csv(out_dir / "synthesis_trace.csv", outcome.report);
  log << "wrote " << (out_dir / "artifact.json").string() << "\n";
  return verified ? kExitOk : kExitUnverified;
}

// ---------------------------------------------------------------------------
// verify

inline ExpertController rebuild_expert(const SclfArtifact& a, const ControlAffineSystem& sys) {
  const QuadraticCost cost = QuadraticCost::diagonal(a.q_diag, a.r_diag);
  return ExpertController(sys, cost, a.terminal, a.ocp);
}

inline int cmd_verify(const std::filesystem::path& artifact_path, int audit_points,
                      std::uint64_t seed, std::ostream& log = std::cout) {
  SclfArtifact a;
  RunConfig cfg;
  ControlAffineSystem sys;
  try {
    a = load_artifact(artifact_path);
    cfg = parse_run_config(a.config_echo);
    sys = make_system(cfg);
    if (fingerprint_hex(sys) != a.system_fingerprint)
      throw FingerprintMismatch("verify: artifact fingerprint does not match its config echo");
  } catch (const Error& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kExitUsage;
  }
  const QuadraticCost cost = QuadraticCost::diagonal(a.q_diag, a.r_diag);
  const ExpertController expert(sys, cost, a.terminal, a.ocp);

  AuditResult res;
  if (audit_points > 0) {
    res = audit_certificate(a.basis, a.alpha, expert, cost, sys.domain, audit_points, seed,
                            cfg.synth.search, a.report.cut_points);
  } else {
    SearchConfig sc = cfg.synth.search;
    sc.seed = seed;
    const auto [x_star, omega_star] =
        max_violation(a.basis, a.alpha, expert, cost, sys.domain, sc, a.report.cut_points);
    res.max_omega = omega_star;
    res.worst_x = x_star;
  }
  const bool pass = res.max_omega <= a.verified_tol;
  log << "verify: worst omega = " << res.max_omega << " at x = ["
      << res.worst_x.transpose() << "] (gate " << a.verified_tol << ") -> "
      << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? kExitOk : kExitUnverified;
}

// ---------------------------------------------------------------------------
// simulate

inline SclfController controller_from_artifact(const SclfArtifact& a,
                                               const ControlAffineSystem& sys, ControlMode mode) {
  if (mode == ControlMode::Explicit && sys.input_set.kind() != InputSet::Kind::Box)
    throw ConfigError("online mode 'explicit' requires a box input set");
  const QuadraticCost cost = QuadraticCost::diagonal(a.q_diag, a.r_diag);
  return SclfController(sys, a.basis, a.alpha, cost, mode,
                        mode == ControlMode::LocalRefined ? a.terminal.K : Mat());
}

inline int cmd_simulate(const std::filesystem::path& artifact_path,
                        const std::filesystem::path& config_path,
                        const std::filesystem::path& out_dir, std::ostream& log = std::cout) {
  SclfArtifact a;
  RunConfig cfg;
  ControlAffineSystem sys;
  std::optional<SclfController> ctrl;
  try {
    a = load_artifact(artifact_path);
    cfg = parse_run_config(read_json_file(config_path));
    sys = make_system(cfg);
    if (fingerprint_hex(sys) != a.system_fingerprint)
      throw FingerprintMismatch("simulate: config system does not match the artifact");
    ctrl.emplace(controller_from_artifact(a, sys, cfg.online_mode));
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  std::filesystem::create_directories(out_dir);

  const std::vector<Vec> x0s = initial_states_from_config(cfg.sim, a.basis, a.alpha, sys.domain);
  SimParams params{cfg.sim.t_final, cfg.sim.t_s, cfg.sim.substeps};

  Json summary;
  summary["controller"] = to_string(cfg.online_mode);
  summary["runs"] = Json::array();
  int failures = 0;
  for (std::size_t i = 0; i < x0s.size(); ++i) {
    Json run;
    run["x0"] = vec_to_json(x0s[i]);
    if (!sys.domain.contains(x0s[i])) {
      run["status"] = "rejected";
      run["message"] = "initial state outside the domain box";
      ++failures;
      summary["runs"].push_back(std::move(run));
      log << "run " << i << ": rejected (x0 outside domain)\n";
      continue;
    }
    try {
      const Trajectory traj = simulate(
          sys, [&](const Vec& x) { return control(*ctrl, x); }, x0s[i], params, &*ctrl,
          to_string(cfg.online_mode));
      const std::string csv = "traj_" + std::to_string(i) + ".csv";
      write_trajectory_csv(out_dir / csv, traj, sys.n, sys.m);
      double theta_max = -std::numeric_limits<double>::infinity();
      for (double th : traj.theta) theta_max = std::max(theta_max, th);
      run["status"] = traj.domain_exit ? "domain_exit" : "ok";
      run["csv"] = csv;
      run["rmse"] = rmse(traj);
      run["final_norm"] = traj.states.back().norm();
      run["cost_integral"] = traj.running_cost;
      run["theta_max"] = theta_max;
      run["v_x0"] = ctrl->V(x0s[i]);
      if (traj.domain_exit) ++failures;
    } catch (const Error& e) {
      run["status"] = "failed";
      run["message"] = e.what();
      ++failures;
    }
    summary["runs"].push_back(std::move(run));
  }
  write_file_atomic(out_dir / "simulate_summary.json", canonical_dump(summary));
  log << "simulate: " << x0s.size() - failures << "/" << x0s.size() << " runs clean, summary at "
      << (out_dir / "simulate_summary.json").string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// compare

inline int cmd_compare(const std::filesystem::path& artifact_path,
                       const std::filesystem::path& config_path,
                       const std::filesystem::path& out_dir, std::ostream& log = std::cout) {
  SclfArtifact a;
  RunConfig cfg;
  ControlAffineSystem sys;
  std::optional<SclfController> ctrl;
  try {
    a = load_artifact(artifact_path);
    cfg = parse_run_config(read_json_file(config_path));
    sys = make_system(cfg);
    if (fingerprint_hex(sys) != a.system_fingerprint)
      throw FingerprintMismatch("compare: config system does not match the artifact");
    ctrl.emplace(controller_from_artifact(a, sys, cfg.online_mode));
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  std::filesystem::create_directories(out_dir);
  const QuadraticCost cost = QuadraticCost::diagonal(a.q_diag, a.r_diag);

  OcpConfig ocp_on = a.ocp;
  ocp_on.horizon = cfg.t_on;
  // Keep the online grid near the synthesis step while dividing the horizon
  // exactly.
  ocp_on.tau_s = cfg.t_on / std::max(1.0, std::round(cfg.t_on / a.ocp.tau_s));
  const ExpertController mpc_online(sys, cost, a.terminal, ocp_on);
  const ExpertController loss_expert(sys, cost, a.terminal, a.ocp);

  const std::vector<Vec> x0s = initial_states_from_config(cfg.sim, a.basis, a.alpha, sys.domain);
  SimParams params{cfg.sim.t_final, cfg.sim.t_s, cfg.sim.substeps};
  const ComparisonResult res = compare(sys, *ctrl, mpc_online, x0s, params, &loss_expert);

  Json j;
  j["system"] = sys.name;
  for (const auto* side : {&res.sclf, &res.mpc}) {
    Json s;
    s["label"] = side->label;
    s["rmse_mean"] = side->rmse_mean;
    s["rmse_runs"] = side->rmse_runs;
    s["final_norm_mean"] = side->final_norm_mean;
    s["cost_integral"] = side->cost_integral;
    s["runs_ok"] = side->runs_ok;
    s["runs_failed"] = side->runs_failed;
    if (!side->loss.empty()) {
      s["loss"] = side->loss;
      s["loss_mean"] = side->loss_mean;
      s["v_x0"] = side->v_x0;
      s["psi_x0"] = side->psi_x0;
    }
    j[side == &res.sclf ? "sclf" : "mpc"] = std::move(s);
  }
  j["timing"]["sclf_ct_ms"] = res.sclf.ct_mean_s * 1e3;
  j["timing"]["mpc_ct_ms"] = res.mpc.ct_mean_s * 1e3;
  j["timing"]["ratio"] = res.sclf.ct_mean_s > 0.0 ? res.mpc.ct_mean_s / res.sclf.ct_mean_s : 0.0;
  write_file_atomic(out_dir / "comparison.json", canonical_dump(j));

  std::ostringstream tbl;
  char line[160];
  std::snprintf(line, sizeof(line), "%-12s | %-10s %-10s | %-10s %-10s\n", "Model", "SCLF CT", "SCLF RMSE",
                "MPC CT", "MPC RMSE");
  tbl << line;
  tbl << std::string(60, '-') << "\n";
  std::snprintf(line, sizeof(line), "%-12s | %-10.4g %-10.4g | %-10.4g %-10.4g\n", sys.name.c_str(),
                res.sclf.ct_mean_s * 1e3, res.sclf.rmse_mean, res.mpc.ct_mean_s * 1e3,
                res.mpc.rmse_mean);
  tbl << line;
  tbl << "(CT in ms per control evaluation)\n";
  write_file_atomic(out_dir / "comparison.txt", tbl.str());
  log << tbl.str();
  return kExitOk;
}

}  // namespace sclf
