#pragma once

#include <sclf/basis.hpp>
#include <sclf/expert.hpp>
#include <sclf/lp.hpp>
#include <sclf/parallel.hpp>
#include <sclf/rng.hpp>
#include <sclf/types.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_set>
#include <utility>
#include <vector>

namespace sclf {

// Semi-infinite LP for the SCLF coefficients: the condition function
//     Omega(alpha, x) = sum_k alpha_k grad V_k(x) . (A(x) + B(x) w(x)) + g(x, w(x))
// must be <= 0 over the domain. Constraints are collected on a grid refined
// by cutting planes at the most violated state.

struct ConstraintRow {
  Vec x;
  Vec coeffs;      // entry k = grad V_k(x) . f(x, w(x))
  double rhs;      // -g(x, w(x)), always <= 0
  Vec omega_x;     // cached expert control
};

struct GridPoint {
  Vec x;
  int cut_iteration;  // -1 for the initial grid
};

struct GridSet {
  std::vector<GridPoint> points;
};

struct LpSolution {
  Coefficients alpha;
  double objective = 0.0;
  LpStatus status = LpStatus::Infeasible;
  std::vector<int> infeasible_rows;
};

enum class SynthStatus { Verified, Unverified, InfeasibleLp };

struct SynthesisReport {
  SynthStatus status = SynthStatus::Unverified;
  int iterations = 0;
  std::vector<double> omega_star_trace;
  std::vector<Vec> cut_points;
  std::vector<Vec> initial_points;
  std::vector<double> lp_objective_trace;
  std::vector<double> wall_time_s;
  std::vector<int> infeasible_rows;
  double tol_viol = 0.0;
  double final_omega_star = 0.0;
  int n_basis = 0;
  int pruned_count = 0;   // filled by the prune step
  double eps_n = 0.0;
};

struct GranularityBound {
  double nu = 0.0;       // sampled Lipschitz estimate of Gamma
  double eta = 0.0;      // sampled Lipschitz estimate of g(., w(.))
  double rho_bar = 0.0;  // covering radius of the grid
  double varphi = 0.0;
  double zeta = 0.0;     // (eta + nu) rho_bar / (1 - varphi)
};

struct SearchConfig {
  int starts = 64;
  double step_start_rel = 0.25;
  double step_min_rel = 1e-4;
  int max_polls = 200;
  std::uint64_t seed = 1;
  unsigned threads = 0;  // 0: use thread_count()
};

struct SynthConfig {
  int n_g = 20;
  double tol_viol = -1.0;  // < 0: auto, 1e-6 * (1 + max g over the initial grid)
  int iter_cap = 500;
  double wall_cap_s = 0.0;  // 0: unlimited
  std::uint64_t seed = 1;
  SearchConfig search;
};

// ---------------------------------------------------------------------------

inline double omega_condition(const BasisSet& basis, const Coefficients& alpha, const Vec& x,
                              ExpertController::Session& session, const QuadraticCost& cost) {
  const Vec u = session.omega(x);
  const Vec f = eval_dynamics(session.owner().system(), x, u);
  return eval_gradV(basis, alpha, x).dot(f) + cost.eval(x, u);
}

inline double omega_condition(const BasisSet& basis, const Coefficients& alpha, const Vec& x,
                              const ExpertController& expert, const QuadraticCost& cost) {
  auto ses = expert.session();
  return omega_condition(basis, alpha, x, ses, cost);
}

inline ConstraintRow build_row(const BasisSet& basis, const Vec& x,
                               ExpertController::Session& session, const QuadraticCost& cost) {
  ConstraintRow row;
  row.x = x;
  row.omega_x = session.omega(x);
  const Vec f = eval_dynamics(session.owner().system(), x, row.omega_x);
  row.coeffs.resize(basis.size());
  for (int k = 0; k < basis.size(); ++k)
    row.coeffs[k] = eval_gradient(basis.functions[k], x).dot(f);
  row.rhs = -cost.eval(x, row.omega_x);
  return row;
}

inline double omega_from_row(const ConstraintRow& row, const Coefficients& alpha) {
  return row.coeffs.dot(alpha) - row.rhs;
}

// LP over the stored rows: min w'alpha, alpha >= 0, coeffs'alpha <= rhs.
inline LpSolution solve_lp(const std::vector<ConstraintRow>& rows, int n_basis,
                           const Vec& objective_weights) {
  if (rows.empty()) throw ConfigError("solve_lp: no rows");
  LpProblem p;
  p.c = objective_weights;
  p.A_le.resize(rows.size(), n_basis);
  p.b_le.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    p.A_le.row(i) = rows[i].coeffs.transpose();
    p.b_le[i] = rows[i].rhs;
  }
  const LpResult r = sclf::solve_lp(p, 1e-9);
  LpSolution out;
  out.status = r.status;
  out.infeasible_rows = r.infeasible_rows;
  if (r.status == LpStatus::Unbounded)
    throw InternalError("solve_lp: unbounded with positive weights");
  if (r.status == LpStatus::Optimal) {
    out.alpha = r.x;
    out.objective = r.objective;
    // Postcondition: every stored row satisfied within tolerance.
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double v = rows[i].coeffs.dot(out.alpha) - rows[i].rhs;
      if (v > 1e-9 * (1.0 + std::abs(rows[i].rhs)))
        throw InternalError("solve_lp: optimal point violates a stored row");
    }
  }
  return out;
}

inline Vec ones_objective(int n) { return Vec::Ones(n); }

// Alternative objective from the remark on tuning the performance at a
// nominal initial state: w_k = V_k(x0).
inline Vec state_weighted_objective(const BasisSet& basis, const Vec& x0) {
  Vec w(basis.size());
  for (int k = 0; k < basis.size(); ++k) w[k] = eval_basis(basis.functions[k], x0);
  return w;
}

// ---------------------------------------------------------------------------
// Violation maximization (the certificate search)

namespace detail {

struct SearchTask {
  Vec start;
};

// Projected compass search over the domain box; derivative-free since
// d w / d x is unavailable at constraint activations.
template <typename OmegaFn>
std::pair<Vec, double> pattern_search(const OmegaFn& f, const DomainBox& box, Vec x,
                                      const SearchConfig& cfg) {
  const Vec hw = box.halfwidth();
  x = box.clamp(x);
  double fx = f(x);
  double rel = cfg.step_start_rel;
  int polls = 0;
  while (rel >= cfg.step_min_rel && polls < cfg.max_polls) {
    ++polls;
    Vec best_x = x;
    double best_f = fx;
    for (int i = 0; i < box.dim(); ++i) {
      for (const double s : {1.0, -1.0}) {
        Vec xt = x;
        xt[i] = std::clamp(xt[i] + s * rel * hw[i], box.lo[i], box.hi[i]);
        if (xt[i] == x[i]) continue;
        const double ft = f(xt);
        if (ft > best_f) {
          best_f = ft;
          best_x = xt;
        }
      }
    }
    if (best_f > fx) {
      x = best_x;
      fx = best_f;
    } else {
      rel *= 0.5;
    }
  }
  return {x, fx};
}

inline bool better_point(double fa, const Vec& xa, double fb, const Vec& xb) {
  if (fa != fb) return fa > fb;
  for (Eigen::Index i = 0; i < xa.size(); ++i)
    if (xa[i] != xb[i]) return xa[i] < xb[i];
  return false;
}

inline std::vector<Vec> latin_hypercube(const DomainBox& box, int count, Rng& rng) {
  const int n = box.dim();
  std::vector<std::vector<int>> perm(n, std::vector<int>(count));
  for (int d = 0; d < n; ++d) {
    auto& p = perm[d];
    std::iota(p.begin(), p.end(), 0);
    for (int i = count - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
      std::swap(p[i], p[j]);
    }
  }
  std::vector<Vec> out(count, Vec(n));
  for (int i = 0; i < count; ++i)
    for (int d = 0; d < n; ++d) {
      const double frac = (perm[d][i] + rng.uniform01()) / count;
      out[i][d] = box.lo[d] + frac * (box.hi[d] - box.lo[d]);
    }
  return out;
}

}  // namespace detail

// Multi-start ascent on Omega(alpha, .): Latin-hypercube seeds, all previous
// cut points, and (a capped subsample of) the domain-box vertices compete on
// their initial value; the best `starts` candidates are refined by pattern
// search. Returns the most violated point found.
inline std::pair<Vec, double> max_violation(const BasisSet& basis, const Coefficients& alpha,
                                            const ExpertController& expert,
                                            const QuadraticCost& cost, const DomainBox& domain,
                                            const SearchConfig& cfg,
                                            const std::vector<Vec>& prev_cuts = {}) {
  validate_coefficients(alpha, basis);
  Rng rng(cfg.seed);
  std::vector<Vec> candidates = detail::latin_hypercube(domain, cfg.starts, rng);
  for (const auto& c : prev_cuts) candidates.push_back(c);
  {
    const int n = domain.dim();
    const long n_vertices = 1l << n;
    std::vector<long> idx(n_vertices);
    std::iota(idx.begin(), idx.end(), 0l);
    if (n_vertices > cfg.starts) {
      for (long i = n_vertices - 1; i > 0; --i)
        std::swap(idx[i], idx[rng.next_u64() % static_cast<std::uint64_t>(i + 1)]);
      idx.resize(cfg.starts);
    }
    for (const long code : idx) {
      Vec v(n);
      for (int d = 0; d < n; ++d) v[d] = (code >> d) & 1 ? domain.hi[d] : domain.lo[d];
      candidates.push_back(v);
    }
  }

  const unsigned threads = cfg.threads ? cfg.threads : thread_count();

  // Rank the candidates by their violation. One session per candidate keeps
  // the outcome independent of the worker count (candidates are scattered, so
  // warm starts would not trigger between them anyway).
  std::vector<double> cand_val(candidates.size());
  {
    std::vector<ExpertController::Session> sessions;
    sessions.reserve(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i) sessions.push_back(expert.session(false));
    parallel_for(
        candidates.size(),
        [&](std::size_t i) {
          cand_val[i] = omega_condition(basis, alpha, candidates[i], sessions[i], cost);
        },
        threads);
    std::vector<const ExpertController::Session*> ordered;
    for (const auto& s : sessions) ordered.push_back(&s);
    expert.merge(ordered);
  }

  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return detail::better_point(cand_val[a], candidates[a], cand_val[b], candidates[b]);
  });

  // Dedup on the cache quantization and keep the best `starts`.
  std::vector<Vec> starts;
  std::unordered_set<std::string> seen;
  for (const std::size_t i : order) {
    if (static_cast<int>(starts.size()) >= cfg.starts) break;
    const std::string key = detail::quantize_key(candidates[i]);
    if (seen.insert(key).second) starts.push_back(candidates[i]);
  }

  // Refine each start; tasks are independent, buffers merged in index order.
  std::vector<std::pair<Vec, double>> results(starts.size());
  std::vector<ExpertController::Session> sessions;
  sessions.reserve(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i) sessions.push_back(expert.session(false));
  parallel_for(
      starts.size(),
      [&](std::size_t i) {
        auto& ses = sessions[i];
        const auto f = [&](const Vec& x) { return omega_condition(basis, alpha, x, ses, cost); };
        results[i] = detail::pattern_search(f, domain, starts[i], cfg);
      },
      threads);
  {
    std::vector<const ExpertController::Session*> ordered;
    for (const auto& s : sessions) ordered.push_back(&s);
    expert.merge(ordered);
  }

  Vec best_x = Vec::Zero(domain.dim());
  double best_f = -std::numeric_limits<double>::infinity();
  for (const auto& [x, f] : results)
    if (detail::better_point(f, x, best_f, best_x)) {
      best_x = x;
      best_f = f;
    }
  if (results.empty()) {
    ExpertController::Session ses = expert.session();
    best_f = omega_condition(basis, alpha, best_x, ses, cost);
  }
  return {best_x, best_f};
}

// ---------------------------------------------------------------------------
// Algorithm: cutting-plane construction of the SCLF coefficients

struct SynthesisOutcome {
  Coefficients alpha;
  SynthesisReport report;
  std::vector<ConstraintRow> rows;
  GridSet grid;
};

inline SynthesisOutcome cutting_plane_synthesize(const BasisSet& basis,
                                                 const ExpertController& expert,
                                                 const QuadraticCost& cost,
                                                 const DomainBox& domain, const SynthConfig& cfg) {
  if (cfg.n_g < 1) throw ConfigError("cutting_plane_synthesize: n_g must be >= 1");
  using clock = std::chrono::steady_clock;
  const auto t_begin = clock::now();

  SynthesisOutcome out;
  out.report.n_basis = basis.size();

  Rng rng(cfg.seed);
  std::vector<Vec> init_points(cfg.n_g);
  for (auto& x : init_points) x = domain.sample(rng);

  // Initial rows; one expert solve per grid point.
  out.rows.reserve(cfg.n_g);
  {
    std::vector<ConstraintRow> rows(cfg.n_g);
    std::vector<ExpertController::Session> sessions;
    const unsigned threads = cfg.search.threads ? cfg.search.threads : thread_count();
    sessions.reserve(cfg.n_g);
    for (int i = 0; i < cfg.n_g; ++i) sessions.push_back(expert.session(false));
    parallel_for(
        static_cast<std::size_t>(cfg.n_g),
        [&](std::size_t i) { rows[i] = build_row(basis, init_points[i], sessions[i], cost); },
        threads);
    std::vector<const ExpertController::Session*> ordered;
    for (const auto& s : sessions) ordered.push_back(&s);
    expert.merge(ordered);
    for (auto& r : rows) out.rows.push_back(std::move(r));
  }
  for (const auto& x : init_points) {
    out.grid.points.push_back({x, -1});
    out.report.initial_points.push_back(x);
  }

  double tol_viol = cfg.tol_viol;
  if (tol_viol < 0.0) {
    double g_max = 0.0;
    for (const auto& r : out.rows) g_max = std::max(g_max, -r.rhs);
    tol_viol = 1e-6 * (1.0 + g_max);
  }
  out.report.tol_viol = tol_viol;

  const Vec w = ones_objective(basis.size());
  double prev_objective = -std::numeric_limits<double>::infinity();

  for (int iter = 0; iter < cfg.iter_cap; ++iter) {
    const auto t_iter = clock::now();
    const LpSolution lp = solve_lp(out.rows, basis.size(), w);
    if (lp.status == LpStatus::Infeasible) {
      out.report.status = SynthStatus::InfeasibleLp;
      out.report.infeasible_rows = lp.infeasible_rows;
      out.report.iterations = iter;
      return out;
    }
    if (lp.objective < prev_objective - 1e-9 * (1.0 + std::abs(prev_objective)))
      throw InternalError("cutting_plane_synthesize: LP objective decreased across a cut");
    prev_objective = lp.objective;
    out.alpha = lp.alpha;
    out.report.lp_objective_trace.push_back(lp.objective);

    SearchConfig search = cfg.search;
    search.seed = Rng(cfg.seed ^ 0x9d2c5680u).fork(static_cast<std::uint64_t>(iter)).next_u64();
    const auto [x_star, omega_star] =
        max_violation(basis, out.alpha, expert, cost, domain, search, out.report.cut_points);

    out.report.omega_star_trace.push_back(omega_star);
    out.report.wall_time_s.push_back(std::chrono::duration<double>(clock::now() - t_iter).count());
    out.report.iterations = iter + 1;
    out.report.final_omega_star = omega_star;

    if (omega_star <= tol_viol) {
      out.report.status = SynthStatus::Verified;
      return out;
    }
    const double elapsed = std::chrono::duration<double>(clock::now() - t_begin).count();
    if (cfg.wall_cap_s > 0.0 && elapsed > cfg.wall_cap_s) break;

    out.report.cut_points.push_back(x_star);
    out.grid.points.push_back({x_star, iter});
    ExpertController::Session ses = expert.session();
    out.rows.push_back(build_row(basis, x_star, ses, cost));
  }
  out.report.status = SynthStatus::Unverified;  // cap hit with violation outstanding
  return out;
}

// ---------------------------------------------------------------------------
// Pruning

struct PruneResult {
  Coefficients alpha;
  std::vector<int> kept_indices;
};

inline PruneResult prune(const Coefficients& alpha, double eps_n) {
  if (!(eps_n > 0.0)) throw ConfigError("prune: eps_n must be > 0");
  PruneResult out;
  out.alpha = Vec::Zero(alpha.size());
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    if (alpha[k] >= eps_n) {
      out.alpha[k] = alpha[k];
      out.kept_indices.push_back(static_cast<int>(k));
    }
  }
  if (out.kept_indices.empty()) throw AllPruned("prune: every coefficient below threshold");
  return out;
}

// Prune, then re-verify with the relaxed tolerance; coefficients are restored
// greedily (largest first) if the pruned candidate fails the maximizer.
inline PruneResult prune_verified(const Coefficients& alpha, double eps_n, const BasisSet& basis,
                                  const ExpertController& expert, const QuadraticCost& cost,
                                  const DomainBox& domain, const SearchConfig& search,
                                  double tol_viol, const std::vector<Vec>& prev_cuts) {
  PruneResult res = prune(alpha, eps_n);
  std::vector<int> removed;
  for (Eigen::Index k = 0; k < alpha.size(); ++k)
    if (alpha[k] > 0.0 && res.alpha[k] == 0.0) removed.push_back(static_cast<int>(k));
  std::sort(removed.begin(), removed.end(),
            [&](int a, int b) { return alpha[a] != alpha[b] ? alpha[a] > alpha[b] : a < b; });

  for (std::size_t attempt = 0; attempt <= removed.size(); ++attempt) {
    const auto [x_star, omega_star] =
        max_violation(basis, res.alpha, expert, cost, domain, search, prev_cuts);
    (void)x_star;
    if (omega_star <= 10.0 * tol_viol) return res;
    if (attempt == removed.size()) break;
    const int k = removed[attempt];
    res.alpha[k] = alpha[k];
    res.kept_indices.push_back(k);
  }
  std::sort(res.kept_indices.begin(), res.kept_indices.end());
  return res;  // fully rolled back; caller re-checks the certificate
}

// ---------------------------------------------------------------------------
// Granularity bound (sampled Lipschitz estimates)

inline GranularityBound granularity_bound(const GridSet& grid, const BasisSet& basis,
                                          const Coefficients& alpha,
                                          const ExpertController& expert,
                                          const QuadraticCost& cost, double varphi,
                                          int sample_pairs, std::uint64_t seed = 0x97a9) {
  if (!(varphi > 0.0 && varphi < 1.0)) throw ConfigError("granularity_bound: varphi in (0,1)");
  const DomainBox& box = expert.system().domain;
  Rng rng(seed);
  ExpertController::Session ses = expert.session();

  const auto gamma_and_g = [&](const Vec& x) {
    const Vec u = ses.omega(x);
    const Vec f = eval_dynamics(expert.system(), x, u);
    return std::make_pair(eval_gradV(basis, alpha, x).dot(f), cost.eval(x, u));
  };

  GranularityBound out;
  out.varphi = varphi;
  for (int i = 0; i < sample_pairs; ++i) {
    const Vec xa = box.sample(rng);
    const Vec xb = box.sample(rng);
    const double d = (xa - xb).norm();
    if (d < 1e-12) continue;
    const auto [ga, gga] = gamma_and_g(xa);
    const auto [gb, ggb] = gamma_and_g(xb);
    out.nu = std::max(out.nu, std::abs(ga - gb) / d);
    out.eta = std::max(out.eta, std::abs(gga - ggb) / d);
  }

  const int dense = std::max(1000, 4 * sample_pairs);
  for (int i = 0; i < dense; ++i) {
    const Vec x = box.sample(rng);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& gp : grid.points) best = std::min(best, (x - gp.x).norm());
    out.rho_bar = std::max(out.rho_bar, best);
  }
  out.zeta = (out.eta + out.nu) * out.rho_bar / (1.0 - varphi);
  return out;
}

}  // namespace sclf
