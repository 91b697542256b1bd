#pragma once

#include <sclf/dynamics.hpp>
#include <sclf/expert.hpp>
#include <sclf/online.hpp>
#include <sclf/types.hpp>

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace sclf {

// Closed-loop records: zero-order-hold control at rate t_s, RK4 in between.

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> inputs;
  std::vector<double> theta;
  std::vector<double> v_values;
  std::vector<double> cost_cum;  // trapezoid-integrated g up to each sample
  std::vector<double> per_step_compute_s;
  double running_cost = 0.0;  // final value of cost_cum
  std::string controller_label;
  bool domain_exit = false;

  std::size_t size() const { return states.size(); }
};

struct SimParams {
  double t_final = 10.0;
  double t_s = 0.05;
  int substeps = 10;
};

using ControlLaw = std::function<Vec(const Vec&)>;

inline Vec rk4_hold_step(const ControlAffineSystem& sys, const Vec& x0, const Vec& u, double dt,
                         int substeps) {
  Vec x = x0;
  const double h = dt / substeps;
  for (int s = 0; s < substeps; ++s) {
    const Vec k1 = eval_dynamics(sys, x, u);
    const Vec k2 = eval_dynamics(sys, x + 0.5 * h * k1, u);
    const Vec k3 = eval_dynamics(sys, x + 0.5 * h * k2, u);
    const Vec k4 = eval_dynamics(sys, x + h * k3, u);
    x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return x;
}

// metrics, when given, supplies V and Theta records; both are evaluated
// against the same SCLF regardless of which controller produced u.
inline Trajectory simulate(const ControlAffineSystem& sys, const ControlLaw& controller,
                           const Vec& x0, const SimParams& p,
                           const SclfController* metrics = nullptr,
                           const std::string& label = "") {
  require_dim(x0, sys.n, "simulate x0");
  if (!(p.t_s > 0.0) || !(p.t_final > 0.0) || p.substeps < 1)
    throw ConfigError("simulate: bad time parameters");
  const int n_steps = static_cast<int>(std::lround(p.t_final / p.t_s));

  Trajectory traj;
  traj.controller_label = label;
  Vec x = x0;
  double prev_g = 0.0;
  using clock = std::chrono::steady_clock;

  for (int k = 0; k <= n_steps; ++k) {
    const auto t0 = clock::now();
    const Vec u = controller(x);
    const double ct = std::chrono::duration<double>(clock::now() - t0).count();

    traj.times.push_back(k * p.t_s);
    traj.states.push_back(x);
    traj.inputs.push_back(u);
    traj.per_step_compute_s.push_back(ct);
    double g = 0.0;
    if (metrics) {
      g = metrics->cost().eval(x, u);
      traj.v_values.push_back(metrics->V(x));
      traj.theta.push_back(theta_indicator(*metrics, x, u));
    }
    if (k > 0) traj.running_cost += 0.5 * p.t_s * (prev_g + g);
    traj.cost_cum.push_back(traj.running_cost);
    prev_g = g;

    if (k == n_steps) break;
    x = rk4_hold_step(sys, x, u, p.t_s, p.substeps);
    if (!x.allFinite()) throw NonFiniteState("simulate: state diverged");
    if (!sys.domain.contains(x, 2.0)) {
      traj.domain_exit = true;
      traj.times.push_back((k + 1) * p.t_s);
      traj.states.push_back(x);
      traj.inputs.push_back(Vec::Zero(sys.m));
      traj.per_step_compute_s.push_back(0.0);
      traj.cost_cum.push_back(traj.running_cost);
      if (metrics) {
        traj.v_values.push_back(metrics->V(x));
        traj.theta.push_back(0.0);
      }
      break;
    }
  }
  return traj;
}

// RMSE over the recorded samples x(k t_s), k >= 1 (the initial state is not a
// sample; a single-state trajectory is its own sample).
inline double rmse(const Trajectory& traj) {
  if (traj.states.empty()) throw ConfigError("rmse: empty trajectory");
  const std::size_t start = traj.states.size() > 1 ? 1 : 0;
  double acc = 0.0;
  for (std::size_t k = start; k < traj.states.size(); ++k) acc += traj.states[k].squaredNorm();
  return std::sqrt(acc / static_cast<double>(traj.states.size() - start));
}

// ---------------------------------------------------------------------------
// SCLF vs online-MPC comparison harness

struct ControllerStats {
  std::string label;
  std::vector<double> rmse_runs;
  std::vector<double> final_norm;
  std::vector<double> cost_integral;
  std::vector<double> v_x0;
  std::vector<double> psi_x0;
  std::vector<double> loss;
  double rmse_mean = 0.0;
  double ct_mean_s = 0.0;
  double final_norm_mean = 0.0;
  double cost_integral_mean = 0.0;
  double loss_mean = 0.0;
  int runs_ok = 0;
  int runs_failed = 0;
};

struct ComparisonResult {
  ControllerStats sclf;
  ControllerStats mpc;
  std::vector<Vec> x0_set;
};

inline void finalize_stats(ControllerStats& s, double ct_total, long ct_count) {
  const auto mean = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double a = 0.0;
    for (double x : v) a += x;
    return a / static_cast<double>(v.size());
  };
  s.rmse_mean = mean(s.rmse_runs);
  s.final_norm_mean = mean(s.final_norm);
  s.cost_integral_mean = mean(s.cost_integral);
  s.loss_mean = mean(s.loss);
  s.ct_mean_s = ct_count > 0 ? ct_total / static_cast<double>(ct_count) : 0.0;
}

// Runs the SCLF controller and a receding-horizon expert (horizon T_on) from
// every initial state. loss_expert, when given, evaluates V(x0)/Psi_T(x0)
// with the synthesis horizon. Per-run failures are recorded, not fatal.
inline ComparisonResult compare(const ControlAffineSystem& sys, const SclfController& sclf_ctrl,
                                const ExpertController& mpc_online, const std::vector<Vec>& x0_set,
                                const SimParams& p, const ExpertController* loss_expert = nullptr) {
  ComparisonResult out;
  out.x0_set = x0_set;
  out.sclf.label = std::string("sclf_") + to_string(sclf_ctrl.mode());
  out.mpc.label = "mpc_online";
  double ct_sclf = 0.0, ct_mpc = 0.0;
  long n_sclf = 0, n_mpc = 0;

  for (const Vec& x0 : x0_set) {
    if (!sys.domain.contains(x0)) {
      ++out.sclf.runs_failed;
      ++out.mpc.runs_failed;
      continue;
    }
    try {
      const Trajectory t =
          simulate(sys, [&](const Vec& x) { return control(sclf_ctrl, x); }, x0, p, &sclf_ctrl,
                   out.sclf.label);
      out.sclf.rmse_runs.push_back(rmse(t));
      out.sclf.final_norm.push_back(t.states.back().norm());
      out.sclf.cost_integral.push_back(t.running_cost);
      out.sclf.v_x0.push_back(sclf_ctrl.V(x0));
      if (loss_expert) {
        const double psi = loss_expert->psi_T(x0);
        out.sclf.psi_x0.push_back(psi);
        out.sclf.loss.push_back(psi > 0.0 ? sclf_ctrl.V(x0) / psi : 1.0);
      }
      for (double c : t.per_step_compute_s) ct_sclf += c;
      n_sclf += static_cast<long>(t.per_step_compute_s.size());
      ++out.sclf.runs_ok;
    } catch (const Error&) {
      ++out.sclf.runs_failed;
    }

    try {
      auto ses = mpc_online.session();
      const Trajectory t = simulate(
          sys, [&](const Vec& x) { return ses.solve(x).u_traj.col(0).eval(); }, x0, p, &sclf_ctrl,
          out.mpc.label);
      out.mpc.rmse_runs.push_back(rmse(t));
      out.mpc.final_norm.push_back(t.states.back().norm());
      out.mpc.cost_integral.push_back(t.running_cost);
      for (double c : t.per_step_compute_s) ct_mpc += c;
      n_mpc += static_cast<long>(t.per_step_compute_s.size());
      ++out.mpc.runs_ok;
    } catch (const Error&) {
      ++out.mpc.runs_failed;
    }
  }
  finalize_stats(out.sclf, ct_sclf, n_sclf);
  finalize_stats(out.mpc, ct_mpc, n_mpc);
  return out;
}

}  // namespace sclf
