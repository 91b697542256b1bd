#include <sclf/dynamics.hpp>
#include <sclf/rng.hpp>

#include <gtest/gtest.h>

#include <cmath>

using namespace sclf;

namespace {

// Literal second transcription of the bioreactor equations, kept independent
// of the library implementation (no offset removal).
Vec bioreactor_raw_reference(const Vec& x, double u) {
  const double gamma = 0.4, beta = 0.02, da_s = 1.2, c1s = 0.0938, c2s = 0.9155;
  Vec dx(2);
  dx[0] = -(c1s + x[0]) * (1.0 + u) +
          da_s * (1.0 - x[1] - c2s) * std::exp((c2s + x[1]) / gamma) * (c1s + x[0]);
  dx[1] = -(c2s + x[1]) * (1.0 + u) +
          da_s * (1.0 - x[1] - c2s) * std::exp((c2s + x[1]) / gamma) * (1.0 + beta) *
              (c1s + x[0]) / (1.0 + beta - x[1] - c2s);
  return dx;
}

}  // namespace

TEST(Dynamics, BioreactorEquilibriumAfterOffset) {
  const auto sys = make_bioreactor();
  const Vec f0 = eval_dynamics(sys, Vec::Zero(2), Vec::Zero(1));
  EXPECT_LT(f0.norm(), 1e-12);
  // The recorded offset is exactly the raw residual at the origin.
  const Vec raw0 = bioreactor_raw_reference(Vec::Zero(2), 0.0);
  EXPECT_LT((sys.drift_offset - raw0).norm(), 1e-12);
  EXPECT_LT(raw0.norm(), 1e-3);  // the stated parameters are near-equilibrium
}

TEST(Dynamics, BioreactorMatchesIndependentTranscription) {
  const auto sys = make_bioreactor();
  Vec x(2);
  x << 0.05, -0.02;
  Vec u(1);
  u << 0.3;
  const Vec got = eval_dynamics(sys, x, u);
  const Vec want = bioreactor_raw_reference(x, 0.3) - bioreactor_raw_reference(Vec::Zero(2), 0.0);
  EXPECT_LT((got - want).norm(), 1e-12);
}

TEST(Dynamics, BioreactorParameters) {
  const auto sys = make_bioreactor();
  EXPECT_EQ(sys.n, 2);
  EXPECT_EQ(sys.m, 1);
  EXPECT_NEAR(sys.input_set.u_max()[0], 1.0, 0.0);
  EXPECT_NEAR(sys.domain.hi[0], 0.1, 0.0);
  EXPECT_NEAR(sys.domain.lo[1], -0.1, 0.0);
}

TEST(Dynamics, DroneChainIsTripleDoubleIntegrator) {
  const auto sys = make_drone();
  Vec x(6);
  x << 0, 0, 0, 0.1, 0.2, 0.3;
  const Vec f = eval_dynamics(sys, x, Vec::Zero(3));
  Vec want(6);
  want << 0.1, 0.2, 0.3, 0, 0, 0;
  EXPECT_LT((f - want).norm(), 1e-15);
}

TEST(Dynamics, VtolEquilibriumAndBbarStructure) {
  const auto sys = make_vtol();
  EXPECT_LT(eval_dynamics(sys, Vec::Zero(6), Vec::Zero(2)).norm(), 1e-15);
  const auto [abar, bbar] = linearize(sys);
  // Row of the vertical acceleration: thrust enters with cos 0 = 1, the
  // moment with eps*sin 0 = 0.
  EXPECT_NEAR(bbar(3, 0), 1.0, 1e-9);
  EXPECT_NEAR(bbar(3, 1), 0.0, 1e-9);
  EXPECT_NEAR(bbar(1, 1), 0.2, 1e-9);  // eps*cos 0
  EXPECT_NEAR(bbar(5, 1), 1.0, 1e-9);
}

TEST(Dynamics, DroneLinearizationExact) {
  const auto sys = make_drone();
  const auto [abar, bbar] = linearize(sys);
  Mat a_want = Mat::Zero(6, 6);
  a_want.topRightCorner(3, 3) = Mat::Identity(3, 3);
  Mat b_want = Mat::Zero(6, 3);
  b_want.bottomRows(3) = Mat::Identity(3, 3);
  EXPECT_LT((abar - a_want).norm(), 1e-9);
  EXPECT_LT((bbar - b_want).norm(), 1e-9);
}

TEST(Dynamics, RichardsonRatioForNonlinearJacobians) {
  for (const auto& sys : {make_bioreactor(), make_vtol()}) {
    const double h = 2e-2;
    const auto [a1, b1] = linearize(sys, h);
    const auto [a2, b2] = linearize(sys, h / 2.0);
    const auto [a4, b4] = linearize(sys, h / 4.0);
    const double e12 = (a1 - a2).norm();
    const double e24 = (a2 - a4).norm();
    ASSERT_GT(e24, 0.0) << sys.name;
    const double ratio = e12 / e24;
    EXPECT_GE(ratio, 3.5) << sys.name;
    EXPECT_LE(ratio, 4.5) << sys.name;
  }
}

TEST(Dynamics, DronePolytopeVertices) {
  const auto sys = make_drone();
  const auto& verts = sys.input_set.vertices();
  ASSERT_GE(static_cast<int>(verts.size()), 4);
  ASSERT_LE(static_cast<int>(verts.size()), 17);
  const double g = drone_gravity();
  bool found_bottom = false;
  for (const auto& v : verts)
    if ((v - (Vec(3) << 0, 0, -g).finished()).norm() < 1e-12) found_bottom = true;
  EXPECT_TRUE(found_bottom);
  // r* from the stated formula.
  const double r_star = 1.45 * g * std::sin(0.1745);
  double max_r = 0.0;
  for (const auto& v : verts) max_r = std::max(max_r, std::hypot(v[0], v[1]));
  EXPECT_NEAR(max_r, r_star, 1e-9);
  EXPECT_NEAR(r_star, 2.470, 5e-3);
}

TEST(Dynamics, PolytopeMembershipConsistency) {
  const auto sys = make_drone();
  const auto& uset = sys.input_set;
  for (const auto& v : uset.vertices()) EXPECT_TRUE(uset.contains(v));
  Vec centroid = Vec::Zero(3);
  for (const auto& v : uset.vertices()) centroid += v;
  centroid /= static_cast<double>(uset.vertices().size());
  EXPECT_TRUE(uset.contains(centroid));
  EXPECT_TRUE(uset.contains(Vec::Zero(3)));  // hover is feasible
  double max_norm = 0.0;
  for (const auto& v : uset.vertices()) max_norm = std::max(max_norm, v.norm());
  Vec far(3);
  far << 2.0 * max_norm, 0.0, 0.0;
  EXPECT_FALSE(uset.contains(far));
}

TEST(Dynamics, InputTransformHoverAndVertical) {
  const double g = drone_gravity();
  const auto hover = drone_input_transform(Vec::Zero(3), 0.7);
  EXPECT_NEAR(hover.thrust, g, 1e-12);
  EXPECT_NEAR(hover.phi, 0.0, 1e-12);
  EXPECT_NEAR(hover.theta, 0.0, 1e-12);

  Vec u(3);
  u << 0.0, 0.0, 0.19 * g;
  const auto vert = drone_input_transform(u, 1.3);
  EXPECT_NEAR(vert.thrust, 1.19 * g, 1e-12);
  EXPECT_NEAR(vert.phi, 0.0, 1e-12);
  EXPECT_NEAR(vert.theta, 0.0, 1e-12);

  Vec bad(3);
  bad << 0.0, 0.0, -g;
  EXPECT_THROW(drone_input_transform(bad, 0.0), SingularTransform);
}

TEST(Dynamics, InputTransformRoundTrip) {
  // Substituting (F, phi, theta) back into the attitude dynamics must
  // reproduce the commanded accelerations.
  const double g = drone_gravity();
  const auto sys = make_drone();
  Rng rng(11);
  int tested = 0;
  while (tested < 50) {
    Vec u = rng.normal_vec(3);
    u *= rng.uniform(0.0, 2.0);
    if (!sys.input_set.contains(u)) continue;
    ++tested;
    const double psi = rng.uniform(-M_PI, M_PI);
    const auto t = drone_input_transform(u, psi);
    Vec acc(3);
    acc[0] = t.thrust * (std::cos(t.phi) * std::sin(t.theta) * std::cos(psi) +
                         std::sin(t.phi) * std::sin(psi));
    acc[1] = t.thrust * (std::cos(t.phi) * std::sin(t.theta) * std::sin(psi) -
                         std::sin(t.phi) * std::cos(psi));
    acc[2] = -g + t.thrust * std::cos(t.phi) * std::cos(t.theta);
    EXPECT_LT((acc - u).norm(), 1e-9);
  }
}

TEST(Dynamics, AllBenchmarksHaveEquilibriumAtOrigin) {
  for (const auto& sys : {make_bioreactor(), make_vtol(), make_drone()}) {
    const Vec f0 = eval_dynamics(sys, Vec::Zero(sys.n), Vec::Zero(sys.m));
    EXPECT_LE(f0.norm(), 1e-6) << sys.name;
  }
}

TEST(Dynamics, DimensionChecks) {
  const auto sys = make_bioreactor();
  EXPECT_THROW(eval_dynamics(sys, Vec::Zero(3), Vec::Zero(1)), DimensionMismatch);
  EXPECT_THROW(eval_dynamics(sys, Vec::Zero(2), Vec::Zero(2)), DimensionMismatch);
}

TEST(Dynamics, AnalyticJacobiansMatchFiniteDifferences) {
  Rng rng(67);
  for (const auto& sys : {make_bioreactor(), make_vtol(), make_drone()}) {
    ASSERT_TRUE(static_cast<bool>(sys.jac_x)) << sys.name;
    for (int t = 0; t < 40; ++t) {
      Rng local = rng.fork(t);
      const Vec x = sys.domain.sample(local);
      Vec u(sys.m);
      for (int i = 0; i < sys.m; ++i) u[i] = local.uniform(-0.5, 0.5);
      const Mat j = sys.jac_x(x, u);
      Mat j_fd(sys.n, sys.n);
      for (int c = 0; c < sys.n; ++c) {
        const double h = 1e-6 * std::max(1.0, sys.domain.halfwidth()[c]);
        Vec xp = x, xm = x;
        xp[c] += h;
        xm[c] -= h;
        j_fd.col(c) = (eval_dynamics(sys, xp, u) - eval_dynamics(sys, xm, u)) / (2.0 * h);
      }
      EXPECT_LE((j - j_fd).norm(), 1e-5 * (1.0 + j.norm())) << sys.name;
    }
  }
}
