#pragma once

#include <sclf/types.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace sclf {

// Dense two-phase revised simplex for
//     min  c'x   s.t.  A_le x <= b_le,  A_eq x = b_eq,  x >= 0.
// Problem sizes here are small (a few thousand columns, a few hundred rows),
// so an explicit basis inverse with periodic refactorization is enough.

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpProblem {
  Vec c;
  Mat A_le;
  Vec b_le;
  Mat A_eq;
  Vec b_eq;
};

struct LpResult {
  LpStatus status = LpStatus::Infeasible;
  Vec x;
  double objective = 0.0;
  // On infeasibility: rows (indices into the stacked [le; eq] system) whose
  // artificial variables could not be driven to zero.
  std::vector<int> infeasible_rows;
  long iterations = 0;
};

namespace detail {

class SimplexCore {
 public:
  SimplexCore(const Mat& A, const Vec& b, double tol)
      : A_(A), b_(b), m_(static_cast<int>(A.rows())), n_(static_cast<int>(A.cols())), tol_(tol) {}

  // basis: column index per row. xb: basic values. binv: basis inverse.
  // Minimizes cost over the fixed constraint system; artificials are plain
  // columns the caller appended. blocked[j] = column j may not enter.
  LpStatus run(const Vec& cost, std::vector<int>& basis, Vec& xb, Mat& binv,
               const std::vector<char>& blocked, long& iter_count, long max_iters) {
    const double inf = std::numeric_limits<double>::infinity();
    int stall = 0;
    bool bland = false;
    double last_obj = inf;
    for (long it = 0; it < max_iters; ++it) {
      ++iter_count;
      // Duals and pricing.
      Vec cb(m_);
      for (int i = 0; i < m_; ++i) cb[i] = cost[basis[i]];
      const Vec y = binv.transpose() * cb;

      int enter = -1;
      double best = -tol_;
      std::vector<char> in_basis(n_, 0);
      for (int i = 0; i < m_; ++i) in_basis[basis[i]] = 1;
      for (int j = 0; j < n_; ++j) {
        if (in_basis[j] || blocked[j]) continue;
        const double d = cost[j] - y.dot(A_.col(j));
        if (bland) {
          if (d < -tol_) { enter = j; break; }
        } else if (d < best) {
          best = d;
          enter = j;
        }
      }
      if (enter < 0) return LpStatus::Optimal;

      const Vec w = binv * A_.col(enter);
      int leave = -1;
      double theta = inf;
      for (int i = 0; i < m_; ++i) {
        if (w[i] > 1e-11) {
          const double ratio = xb[i] / w[i];
          if (ratio < theta - 1e-12 ||
              (ratio < theta + 1e-12 &&
               (leave < 0 || (bland ? basis[i] < basis[leave] : w[i] > w[leave])))) {
            theta = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) return LpStatus::Unbounded;

      // Pivot: update basic values and the inverse in place.
      for (int i = 0; i < m_; ++i) xb[i] -= theta * w[i];
      xb[leave] = theta;
      const double piv = w[leave];
      binv.row(leave) /= piv;
      for (int i = 0; i < m_; ++i) {
        if (i != leave && std::abs(w[i]) > 0.0) binv.row(i) -= w[i] * binv.row(leave);
      }
      basis[leave] = enter;

      if ((it + 1) % 64 == 0) refactor(basis, binv, xb);

      double obj = 0.0;
      for (int i = 0; i < m_; ++i) obj += cost[basis[i]] * xb[i];
      if (obj < last_obj - tol_) {
        last_obj = obj;
        stall = 0;
      } else if (++stall > 64) {
        bland = true;  // cycling guard
      }
    }
    throw InternalError("simplex iteration cap exceeded");
  }

  void refactor(const std::vector<int>& basis, Mat& binv, Vec& xb) const {
    Mat B(m_, m_);
    for (int i = 0; i < m_; ++i) B.col(i) = A_.col(basis[i]);
    Eigen::PartialPivLU<Mat> lu(B);
    binv = lu.inverse();
    xb = binv * b_;
    for (int i = 0; i < m_; ++i) xb[i] = std::max(xb[i], 0.0);
  }

 private:
  const Mat& A_;
  const Vec& b_;
  int m_, n_;
  double tol_;
};

}  // namespace detail

inline LpResult solve_lp(const LpProblem& p, double tol = 1e-9, long max_iters = 200000) {
  const int n = static_cast<int>(p.c.size());
  const int m_le = static_cast<int>(p.A_le.rows());
  const int m_eq = static_cast<int>(p.A_eq.rows());
  const int m = m_le + m_eq;

  LpResult res;
  if (m == 0) {
    for (int j = 0; j < n; ++j) {
      if (p.c[j] < -tol) {
        res.status = LpStatus::Unbounded;
        return res;
      }
    }
    res.status = LpStatus::Optimal;
    res.x = Vec::Zero(n);
    res.objective = 0.0;
    return res;
  }

  // Stack into equality standard form with slacks, flipping rows to b >= 0.
  // Columns: [x (n) | slacks (m_le) | artificials (<= m)].
  std::vector<int> art_of_row(m, -1);
  int n_art = 0;
  Vec b(m);
  std::vector<double> row_sign(m, 1.0);
  for (int i = 0; i < m_le; ++i) {
    b[i] = p.b_le[i];
    if (b[i] < 0) { row_sign[i] = -1.0; b[i] = -b[i]; }
  }
  for (int i = 0; i < m_eq; ++i) {
    b[m_le + i] = p.b_eq[i];
    if (b[m_le + i] < 0) { row_sign[m_le + i] = -1.0; b[m_le + i] = -b[m_le + i]; }
  }
  // A slack column only seeds the basis when its row kept sign (+1 slack).
  for (int i = 0; i < m_le; ++i)
    if (row_sign[i] < 0) art_of_row[i] = n_art++;
  for (int i = 0; i < m_eq; ++i) art_of_row[m_le + i] = n_art++;

  const int total = n + m_le + n_art;
  Mat A = Mat::Zero(m, total);
  for (int i = 0; i < m_le; ++i) {
    A.block(i, 0, 1, n) = row_sign[i] * p.A_le.row(i);
    A(i, n + i) = row_sign[i];  // slack
  }
  for (int i = 0; i < m_eq; ++i)
    A.block(m_le + i, 0, 1, n) = row_sign[m_le + i] * p.A_eq.row(i);
  for (int i = 0; i < m; ++i)
    if (art_of_row[i] >= 0) A(i, n + m_le + art_of_row[i]) = 1.0;

  std::vector<int> basis(m);
  for (int i = 0; i < m; ++i)
    basis[i] = art_of_row[i] >= 0 ? n + m_le + art_of_row[i] : n + i;
  Mat binv = Mat::Identity(m, m);
  Vec xb = b;

  detail::SimplexCore core(A, b, tol);
  std::vector<char> blocked(total, 0);

  // Phase 1: drive artificials to zero.
  if (n_art > 0) {
    Vec c1 = Vec::Zero(total);
    for (int j = n + m_le; j < total; ++j) c1[j] = 1.0;
    const LpStatus st = core.run(c1, basis, xb, binv, blocked, res.iterations, max_iters);
    if (st == LpStatus::Unbounded) throw InternalError("phase-1 unbounded");
    double art_sum = 0.0;
    for (int i = 0; i < m; ++i)
      if (basis[i] >= n + m_le) art_sum += xb[i];
    if (art_sum > tol * (1.0 + b.cwiseAbs().maxCoeff())) {
      res.status = LpStatus::Infeasible;
      for (int i = 0; i < m; ++i)
        if (basis[i] >= n + m_le && xb[i] > tol) res.infeasible_rows.push_back(i);
      return res;
    }
    for (int j = n + m_le; j < total; ++j) blocked[j] = 1;
  }

  // Phase 2.
  Vec c2 = Vec::Zero(total);
  c2.head(n) = p.c;
  const LpStatus st = core.run(c2, basis, xb, binv, blocked, res.iterations, max_iters);
  if (st == LpStatus::Unbounded) {
    res.status = LpStatus::Unbounded;
    return res;
  }

  res.status = LpStatus::Optimal;
  res.x = Vec::Zero(n);
  for (int i = 0; i < m; ++i)
    if (basis[i] < n) res.x[basis[i]] = std::max(xb[i], 0.0);
  res.objective = p.c.dot(res.x);
  return res;
}

}  // namespace sclf
