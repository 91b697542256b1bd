#include <sclf/lp.hpp>
#include <sclf/rng.hpp>

#include <gtest/gtest.h>

#include <vector>

using namespace sclf;

namespace {

LpProblem make_le(const Mat& A, const Vec& b, const Vec& c) {
  LpProblem p;
  p.c = c;
  p.A_le = A;
  p.b_le = b;
  return p;
}

// Brute-force vertex enumeration over {x >= 0, Ax <= b}: every vertex is the
// solution of n active constraints drawn from the rows and the bounds x_i = 0.
double vertex_enumeration_optimum(const Mat& A, const Vec& b, const Vec& c, bool* feasible) {
  const int n = static_cast<int>(A.cols());
  const int m = static_cast<int>(A.rows());
  const int total = m + n;
  double best = std::numeric_limits<double>::infinity();
  *feasible = false;
  std::vector<int> pick(n);
  const std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == n) {
      Mat M(n, n);
      Vec rhs(n);
      for (int i = 0; i < n; ++i) {
        if (pick[i] < m) {
          M.row(i) = A.row(pick[i]);
          rhs[i] = b[pick[i]];
        } else {
          M.row(i).setZero();
          M(i, pick[i] - m) = 1.0;
          rhs[i] = 0.0;
        }
      }
      Eigen::FullPivLU<Mat> lu(M);
      if (!lu.isInvertible()) return;
      const Vec x = lu.solve(rhs);
      for (int i = 0; i < n; ++i)
        if (x[i] < -1e-9) return;
      for (int i = 0; i < m; ++i)
        if (A.row(i).dot(x) > b[i] + 1e-9) return;
      *feasible = true;
      best = std::min(best, c.dot(x));
      return;
    }
    for (int i = start; i < total; ++i) {
      pick[depth] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

}  // namespace

TEST(Lp, SingleTightRow) {
  // min a s.t. -a <= -1, a >= 0  ->  a = 1
  const auto r = solve_lp(make_le(Mat::Constant(1, 1, -1.0), Vec::Constant(1, -1.0),
                                  Vec::Ones(1)));
  ASSERT_EQ(r.status, LpStatus::Optimal);
  EXPECT_NEAR(r.x[0], 1.0, 1e-9);
  EXPECT_NEAR(r.objective, 1.0, 1e-9);
}

TEST(Lp, TwoVariableHandEnumeration) {
  // min a1 + a2 s.t. a1 + 2 a2 >= 1: vertices (1,0) and (0,1/2); optimum 1/2.
  Mat A(1, 2);
  A << -1.0, -2.0;
  const auto r = solve_lp(make_le(A, Vec::Constant(1, -1.0), Vec::Ones(2)));
  ASSERT_EQ(r.status, LpStatus::Optimal);
  EXPECT_NEAR(r.x[0], 0.0, 1e-9);
  EXPECT_NEAR(r.x[1], 0.5, 1e-9);
}

TEST(Lp, RedundantRowDoesNotMoveOptimum) {
  Mat A(2, 2);
  A << -1.0, -2.0, -0.5, -1.0;  // second row is half the first: redundant
  Vec b(2);
  b << -1.0, -0.5;
  const auto r1 = solve_lp(make_le(A.topRows(1), b.head(1), Vec::Ones(2)));
  const auto r2 = solve_lp(make_le(A, b, Vec::Ones(2)));
  ASSERT_EQ(r1.status, LpStatus::Optimal);
  ASSERT_EQ(r2.status, LpStatus::Optimal);
  EXPECT_NEAR(r1.objective, r2.objective, 1e-9);
}

TEST(Lp, InfeasibleWithCertificate) {
  // a >= 0 but a <= -1.
  const auto r = solve_lp(make_le(Mat::Constant(1, 1, 1.0), Vec::Constant(1, -1.0), Vec::Ones(1)));
  ASSERT_EQ(r.status, LpStatus::Infeasible);
  ASSERT_FALSE(r.infeasible_rows.empty());
  EXPECT_EQ(r.infeasible_rows[0], 0);
}

TEST(Lp, UnboundedDetected) {
  // min -a with no upper bound on a.
  const auto r = solve_lp(make_le(Mat::Constant(1, 1, -1.0), Vec::Constant(1, 1.0),
                                  Vec::Constant(1, -1.0)));
  EXPECT_EQ(r.status, LpStatus::Unbounded);
}

TEST(Lp, EqualityRows) {
  // x1 + x2 = 1, x1 - x2 = 0 -> x = (1/2, 1/2).
  LpProblem p;
  p.c = Vec::Ones(2);
  p.A_eq.resize(2, 2);
  p.A_eq << 1.0, 1.0, 1.0, -1.0;
  p.b_eq.resize(2);
  p.b_eq << 1.0, 0.0;
  const auto r = solve_lp(p);
  ASSERT_EQ(r.status, LpStatus::Optimal);
  EXPECT_NEAR(r.x[0], 0.5, 1e-9);
  EXPECT_NEAR(r.x[1], 0.5, 1e-9);
}

TEST(Lp, RandomInstancesAgainstVertexEnumeration) {
  Rng rng(20240517);
  int optimal_seen = 0, infeasible_seen = 0;
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_u64() % 2);  // 2 or 3 vars
    const int m = 2 + static_cast<int>(rng.next_u64() % 4);  // up to 5 rows
    Mat A(m + 1, n);
    Vec b(m + 1);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) A(i, j) = rng.uniform(-2.0, 2.0);
      b[i] = rng.uniform(-1.0, 2.0);
    }
    A.row(m).setOnes();  // keep the region bounded
    b[m] = 10.0;
    Vec c(n);
    for (int j = 0; j < n; ++j) c[j] = rng.uniform(0.1, 2.0);

    bool feasible = false;
    const double oracle = vertex_enumeration_optimum(A, b, c, &feasible);
    const auto r = solve_lp(make_le(A, b, c));
    if (feasible) {
      ASSERT_EQ(r.status, LpStatus::Optimal) << "trial " << trial;
      EXPECT_NEAR(r.objective, oracle, 1e-6 * (1.0 + std::abs(oracle))) << "trial " << trial;
      ++optimal_seen;
    } else {
      EXPECT_EQ(r.status, LpStatus::Infeasible) << "trial " << trial;
      ++infeasible_seen;
    }
  }
  EXPECT_GT(optimal_seen, 10);
  EXPECT_GT(infeasible_seen, 2);
}
