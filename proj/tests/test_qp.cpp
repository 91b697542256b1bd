#include <sclf/qp.hpp>
#include <sclf/rng.hpp>

#include <gtest/gtest.h>

using namespace sclf;

TEST(SimplexProjection, KnownPoints) {
  Vec v(2);
  v << 2.0, 0.0;
  const Vec p = project_simplex(v);
  EXPECT_NEAR(p[0], 1.0, 1e-12);
  EXPECT_NEAR(p[1], 0.0, 1e-12);

  Vec w(3);
  w << 0.2, 0.2, 0.2;
  const Vec q = project_simplex(w);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(q[i], 1.0 / 3.0, 1e-12);
}

TEST(SimplexProjection, OptimalityAgainstSampling) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_u64() % 4);
    Vec v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.uniform(-2.0, 2.0);
    const Vec p = project_simplex(v);
    ASSERT_NEAR(p.sum(), 1.0, 1e-12);
    ASSERT_GE(p.minCoeff(), 0.0);
    const double d_star = (p - v).squaredNorm();
    for (int s = 0; s < 500; ++s) {
      Vec w(n);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        w[i] = -std::log(rng.uniform01() + 1e-300);
        acc += w[i];
      }
      w /= acc;
      EXPECT_GE((w - v).squaredNorm() + 1e-12, d_star);
    }
  }
}

TEST(HullProjection, UnitSquare) {
  Mat W(2, 4);
  W << 0, 1, 0, 1, 0, 0, 1, 1;
  Vec p(2);
  p << 2.0, 0.5;
  const auto pr = project_convex_hull(W, p);
  EXPECT_NEAR(pr.point[0], 1.0, 1e-8);
  EXPECT_NEAR(pr.point[1], 0.5, 1e-8);
  EXPECT_NEAR(pr.dist, 1.0, 1e-8);

  Vec inside(2);
  inside << 0.25, 0.75;
  const auto pr2 = project_convex_hull(W, inside);
  EXPECT_LT(pr2.dist, 1e-9);
}

TEST(HullProjection, BeatsRandomHullSamples) {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const int dim = 2 + static_cast<int>(rng.next_u64() % 2);
    const int k = dim + 2 + static_cast<int>(rng.next_u64() % 4);
    Mat W(dim, k);
    for (int j = 0; j < k; ++j) W.col(j) = rng.normal_vec(dim);
    const Vec p = 3.0 * rng.normal_vec(dim);
    const auto pr = project_convex_hull(W, p);
    for (int s = 0; s < 2000; ++s) {
      Vec w(k);
      double acc = 0.0;
      for (int i = 0; i < k; ++i) {
        w[i] = -std::log(rng.uniform01() + 1e-300);
        acc += w[i];
      }
      w /= acc;
      EXPECT_GE((W * w - p).norm() + 1e-7, pr.dist);
    }
  }
}

TEST(BoxQp, DiagonalMatchesSaturation) {
  Mat R = Vec::Constant(2, 2.0).asDiagonal();
  Vec z(2);
  z << 5.0, -0.5;
  Vec umax(2);
  umax << 1.0, 1.0;
  // min 2 z'u + u'Ru -> unconstrained -R^{-1} z = (-2.5, 0.25), clamps to (-1, 0.25).
  const Vec u = box_qp(R, z, umax);
  EXPECT_NEAR(u[0], -1.0, 1e-12);
  EXPECT_NEAR(u[1], 0.25, 1e-12);
}

TEST(BoxQp, NonDiagonalAgainstGrid) {
  Mat R(2, 2);
  R << 2.0, 0.6, 0.6, 1.0;
  Rng rng(4242);
  Vec umax(2);
  umax << 1.0, 0.5;
  for (int trial = 0; trial < 25; ++trial) {
    const Vec z = 2.0 * rng.normal_vec(2);
    const Vec u = box_qp(R, z, umax);
    const double f_star = 2.0 * z.dot(u) + u.dot(R * u);
    const int g = 241;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < g; ++i)
      for (int j = 0; j < g; ++j) {
        Vec v(2);
        v << -umax[0] + 2.0 * umax[0] * i / (g - 1), -umax[1] + 2.0 * umax[1] * j / (g - 1);
        best = std::min(best, 2.0 * z.dot(v) + v.dot(R * v));
      }
    EXPECT_LE(f_star, best + 1e-9);
    EXPECT_LE(std::abs(u[0]), umax[0] + 1e-12);
    EXPECT_LE(std::abs(u[1]), umax[1] + 1e-12);
  }
}

TEST(BoxQp, InfiniteBoundsGiveUnconstrainedMinimizer) {
  Mat R(2, 2);
  R << 3.0, 0.5, 0.5, 2.0;
  Vec z(2);
  z << 1.0, -2.0;
  const double inf = std::numeric_limits<double>::infinity();
  const Vec u = box_qp(R, z, Vec::Constant(2, inf));
  const Vec expected = -R.llt().solve(z);
  EXPECT_NEAR((u - expected).norm(), 0.0, 1e-10);
}
