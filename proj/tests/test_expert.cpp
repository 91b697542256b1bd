#include <sclf/expert.hpp>
#include <sclf/dynamics.hpp>

#include "support/test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace sclf;
using sclf::test::make_double_integrator;
using sclf::test::make_scalar_integrator;
using sclf::test::quick_expert;

namespace {

QuadraticCost unit_cost(int n, int m) {
  return QuadraticCost::diagonal(Vec::Ones(n), Vec::Ones(m));
}

double kappa_max_inscribed(const DomainBox& box, const Mat& S) {
  const Mat S_inv = S.llt().solve(Mat::Identity(S.rows(), S.cols()));
  double k = std::numeric_limits<double>::infinity();
  for (int i = 0; i < box.dim(); ++i) {
    const double d = std::min(std::abs(box.lo[i]), std::abs(box.hi[i]));
    k = std::min(k, d * d / S_inv(i, i));
  }
  return k;
}

}  // namespace

TEST(TerminalRegion, UnboundedLinearAcceptsLargestCandidate) {
  auto sys = make_double_integrator();
  sys.input_set = InputSet::box(Vec::Constant(1, std::numeric_limits<double>::infinity()));
  const auto cost = unit_cost(2, 1);
  const auto [abar, bbar] = linearize(sys);
  const auto care = solve_care(abar, bbar, cost.Q, cost.R);
  const double kappa = compute_terminal_region(sys, cost, care.S, care.K);
  EXPECT_NEAR(kappa, kappa_max_inscribed(sys.domain, care.S), 1e-12);
}

TEST(TerminalRegion, BioreactorRevalidatesAtHigherDensity) {
  const auto sys = make_bioreactor();
  const auto cost = QuadraticCost::diagonal(Vec::Constant(2, 5.0), Vec::Ones(1));
  const auto [abar, bbar] = linearize(sys);
  const auto term = make_terminal_ingredients(sys, cost, abar, bbar);
  ASSERT_GT(term.kappa, 0.0);

  // Oracle: fresh 10x denser boundary sample with a different seed.
  Rng rng(777);
  const Mat L = Mat(term.S.llt().matrixL());
  const Mat Lt_inv = L.transpose().fullPivLu().inverse();
  for (int s = 0; s < 10 * 500 * sys.n; ++s) {
    const Vec x = std::sqrt(term.kappa) * (Lt_inv * rng.unit_sphere(sys.n));
    const Vec u = term.K * x;
    ASSERT_TRUE(sys.input_set.contains(u));
    const double g = cost.eval(x, u);
    const double decay = (2.0 * (term.S * x)).dot(eval_dynamics(sys, x, u)) + g;
    ASSERT_LE(decay, 1e-6 * (1.0 + std::abs(g)));
  }
}

TEST(TerminalRegion, ShrinkingInputsShrinksKappa) {
  const auto cost = unit_cost(2, 1);
  auto sys_wide = make_double_integrator(4.0);
  auto sys_tight = make_double_integrator(0.4);
  const auto [abar, bbar] = linearize(sys_wide);
  const auto care = solve_care(abar, bbar, cost.Q, cost.R);
  const double k_wide = compute_terminal_region(sys_wide, cost, care.S, care.K);
  const double k_tight = compute_terminal_region(sys_tight, cost, care.S, care.K);
  EXPECT_LE(k_tight, k_wide + 1e-15);
}

TEST(SolveOcp, OriginIsFreeAndZero) {
  const auto expert = quick_expert(make_scalar_integrator(), unit_cost(1, 1), 2.0, 0.05);
  const auto r = expert.solve_ocp(Vec::Zero(1));
  EXPECT_EQ(r.status, OcpStatus::Converged);
  EXPECT_DOUBLE_EQ(r.psi, 0.0);
  EXPECT_DOUBLE_EQ(r.u_traj.norm(), 0.0);
  EXPECT_DOUBLE_EQ(expert.psi_T(Vec::Zero(1)), 0.0);
  EXPECT_DOUBLE_EQ(expert.omega(Vec::Zero(1)).norm(), 0.0);
}

TEST(SolveOcp, MatchesUnconstrainedLqrValueInsideTerminalRegion) {
  // Linear system, wide box, small x0: the finite-horizon value approaches
  // the infinite-horizon LQR cost x0' S x0 up to Euler discretization error.
  auto sys = make_double_integrator(50.0);
  const auto cost = unit_cost(2, 1);
  const auto expert = quick_expert(sys, cost, 4.0, 0.005, 1e-9, 4000);
  const auto [abar, bbar] = linearize(sys);
  const Mat S = solve_care(abar, bbar, cost.Q, cost.R).S;
  Rng rng(5);
  for (int t = 0; t < 3; ++t) {
    Vec x0 = 0.05 * rng.normal_vec(2);
    const double psi = expert.psi_T(x0);
    const double lqr = x0.dot(S * x0);
    EXPECT_NEAR(psi, lqr, 0.01 * lqr);
  }
}

TEST(SolveOcp, RefiningToleranceDoesNotWorsenValue) {
  const auto sys = make_bioreactor();
  const auto cost = QuadraticCost::diagonal(Vec::Constant(2, 5.0), Vec::Ones(1));
  Vec x0(2);
  x0 << 0.07, -0.05;
  const auto coarse = quick_expert(sys, cost, 3.0, 0.05, 1e-4, 2000);
  const auto fine = quick_expert(sys, cost, 3.0, 0.05, 5e-5, 2000);
  const double psi_coarse = coarse.psi_T(x0);
  const double psi_fine = fine.psi_T(x0);
  EXPECT_LE(psi_fine, psi_coarse + 1e-4 * coarse.config().steps());
}

TEST(SolveOcp, OmegaStaysInInputSet) {
  const auto sys = make_bioreactor();
  const auto cost = QuadraticCost::diagonal(Vec::Constant(2, 5.0), Vec::Ones(1));
  const auto expert = quick_expert(sys, cost, 2.0, 0.1);
  Rng rng(21);
  for (int t = 0; t < 20; ++t) {
    const Vec x = sys.domain.sample(rng);
    const Vec u = expert.omega(x);
    EXPECT_LE(std::abs(u[0]), 1.0 + 1e-12);
  }
}

TEST(SolveOcp, OmegaPolytopeStaysInHull) {
  const auto sys = make_drone();
  const auto cost =
      QuadraticCost::diagonal((Vec(6) << 50, 50, 50, 5, 5, 5).finished(), Vec::Constant(3, 10.0));
  const auto expert = quick_expert(sys, cost, 3.0, 0.15, 1e-5, 300);
  Rng rng(22);
  for (int t = 0; t < 5; ++t) {
    const Vec x = 0.5 * sys.domain.sample(rng);
    const Vec u = expert.omega(x);
    EXPECT_TRUE(sys.input_set.contains(u, 1e-7));
  }
}

TEST(SolveOcp, LocallyMatchesRiccatiGain) {
  const auto sys = make_bioreactor();
  const auto cost = QuadraticCost::diagonal(Vec::Constant(2, 5.0), Vec::Ones(1));
  const auto expert = quick_expert(sys, cost, 4.0, 0.0025, 1e-10, 8000);
  // Local optimum is the plain (unshifted) Riccati gain.
  const auto [abar, bbar] = linearize(sys);
  const Mat K = solve_care(abar, bbar, cost.Q, cost.R).K;
  Rng rng(31);
  for (int t = 0; t < 3; ++t) {
    // Deep inside the terminal region.
    Vec x = 0.002 * rng.normal_vec(2);
    const Vec kx = K * x;
    const Vec om = expert.omega(x);
    EXPECT_LE((om - kx).norm(), 0.05 * kx.norm() + 1e-12);
  }
}

TEST(SolveOcp, DeterministicAcrossInstances) {
  const auto sys = make_bioreactor();
  const auto cost = QuadraticCost::diagonal(Vec::Constant(2, 5.0), Vec::Ones(1));
  const auto e1 = quick_expert(sys, cost, 2.0, 0.1);
  const auto e2 = quick_expert(sys, cost, 2.0, 0.1);
  Rng rng(41);
  for (int t = 0; t < 5; ++t) {
    const Vec x = sys.domain.sample(rng);
    const Vec u1 = e1.omega(x);
    const Vec u2 = e2.omega(x);
    EXPECT_EQ(0.0, (u1 - u2).norm());  // bitwise
    EXPECT_EQ(e1.psi_T(x), e2.psi_T(x));
  }
}

TEST(SolveOcp, PsiConvexAlongSegmentsForLinearSystem) {
  const auto sys = make_drone();
  const auto cost =
      QuadraticCost::diagonal((Vec(6) << 50, 50, 50, 5, 5, 5).finished(), Vec::Constant(3, 10.0));
  const auto expert = quick_expert(sys, cost, 3.0, 0.15, 1e-6, 500);
  Rng rng(51);
  for (int t = 0; t < 3; ++t) {
    const Vec a = 0.4 * sys.domain.sample(rng);
    const Vec b = 0.4 * sys.domain.sample(rng);
    const double pa = expert.psi_T(a);
    const double pb = expert.psi_T(b);
    const double pm = expert.psi_T(0.5 * (a + b));
    EXPECT_LE(pm, 0.5 * (pa + pb) + 1e-3 * (1.0 + 0.5 * (pa + pb)));
  }
}

TEST(SolveOcp, PsiNondecreasingAlongRays) {
  const auto sys = make_drone();
  const auto cost =
      QuadraticCost::diagonal((Vec(6) << 50, 50, 50, 5, 5, 5).finished(), Vec::Constant(3, 10.0));
  const auto expert = quick_expert(sys, cost, 3.0, 0.15, 1e-6, 500);
  Rng rng(61);
  const Vec dir = sys.domain.sample(rng);
  double prev = 0.0;
  for (const double lam : {0.25, 0.5, 0.75, 1.0}) {
    const double psi = expert.psi_T(lam * dir);
    EXPECT_GE(psi, prev - 1e-3 * (1.0 + psi));
    prev = psi;
  }
}

TEST(SolveOcp, CacheMakesSecondCallFree) {
  const auto sys = make_bioreactor();
  const auto cost = QuadraticCost::diagonal(Vec::Constant(2, 5.0), Vec::Ones(1));
  const auto expert = quick_expert(sys, cost, 2.0, 0.1);
  Vec x(2);
  x << 0.03, -0.06;
  auto ses = expert.session();
  ses.omega(x);
  const long solves_before = expert.ocp_solve_count();
  ses.omega(x);                    // session-local hit
  const Vec u2 = expert.omega(x);  // shared-cache hit through a fresh session
  EXPECT_EQ(expert.ocp_solve_count(), solves_before);
  (void)u2;
}

// The VTOL benchmark point on the table weights, T = 15 s. One expensive
// cold solve. A finite-horizon value is an upper bound on the
// infinite-horizon one (reported at about 62.96 under a 1 ms / 50 s
// discretization), and should not exceed the reported finite-horizon figure
// of 123.55 by more than solver slack; our optimizer lands near 74, between
// the two.
TEST(SolveOcp, VtolBenchmarkPointValueBand) {
  const auto sys = make_vtol();
  const auto cost = QuadraticCost::diagonal((Vec(6) << 5, 1, 5, 1, 10, 1).finished(),
                                            Vec::Constant(2, 4.0));
  const auto expert = quick_expert(sys, cost, 15.0, 0.05, 1e-6, 1500);
  Vec x0(6);
  x0 << 1.50, -0.19, -1.50, -0.17, -0.30, -0.02;
  const double psi = expert.psi_T(x0);
  EXPECT_GE(psi, 62.96 * 0.98);
  EXPECT_LE(psi, 123.55 * 1.25);
}
