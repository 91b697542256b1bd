#pragma once

#include <sclf/types.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace sclf {

// Euclidean projection onto the probability simplex {w >= 0, sum w = 1}.
inline Vec project_simplex(const Vec& v) {
  const int n = static_cast<int>(v.size());
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<double>());
  double csum = 0.0, tau = 0.0;
  int rho = 0;
  for (int j = 0; j < n; ++j) {
    csum += u[j];
    const double t = (1.0 - csum) / (j + 1);
    if (u[j] + t > 0.0) {
      rho = j + 1;
      tau = t;
    }
  }
  Vec w(n);
  for (int i = 0; i < n; ++i) w[i] = std::max(v[i] + tau, 0.0);
  return w;
}

struct HullProjection {
  Vec point;    // nearest point in co(columns of W)
  Vec weights;  // convex-combination weights
  double dist;  // Euclidean distance from the query
  int iters = 0;
};

// Active-set solver for  min w'Hw + 2c'w  s.t.  sum w = 1, w >= 0,
// H symmetric PSD. Exact up to the KKT linear solves; the supports here have
// at most a few dozen entries.
inline Vec simplex_qp(const Mat& H, const Vec& c, const Vec* warm = nullptr) {
  const int k = static_cast<int>(c.size());
  const double scale = H.cwiseAbs().maxCoeff() + c.cwiseAbs().maxCoeff() + 1e-300;
  const double tol = 1e-12 * scale;

  Vec w = warm && warm->size() == k ? project_simplex(*warm) : Vec::Constant(k, 1.0 / k);
  std::vector<char> active(k, 1);  // in the support
  for (int i = 0; i < k; ++i) active[i] = w[i] > 1e-14 ? 1 : 0;

  const auto solve_support = [&](Vec& w_eq, double& nu) {
    std::vector<int> idx;
    for (int i = 0; i < k; ++i)
      if (active[i]) idx.push_back(i);
    const int s = static_cast<int>(idx.size());
    Mat kkt = Mat::Zero(s + 1, s + 1);
    Vec rhs(s + 1);
    for (int a = 0; a < s; ++a) {
      for (int b = 0; b < s; ++b) kkt(a, b) = 2.0 * H(idx[a], idx[b]);
      kkt(a, s) = kkt(s, a) = 1.0;
      rhs[a] = -2.0 * c[idx[a]];
    }
    rhs[s] = 1.0;
    const Vec sol = kkt.fullPivLu().solve(rhs);
    w_eq = Vec::Zero(k);
    for (int a = 0; a < s; ++a) w_eq[idx[a]] = sol[a];
    nu = sol[s];
  };

  double nu = 0.0;
  for (int outer = 0; outer < 100 * (k + 1); ++outer) {
    Vec w_eq;
    solve_support(w_eq, nu);
    // Pull the iterate toward the equality solution, clipping at the first
    // weight that would go negative.
    bool clipped = false;
    double t = 1.0;
    int drop = -1;
    for (int i = 0; i < k; ++i) {
      if (active[i] && w_eq[i] < -1e-14) {
        const double ti = w[i] / std::max(w[i] - w_eq[i], 1e-300);
        if (ti < t) {
          t = ti;
          drop = i;
        }
        clipped = true;
      }
    }
    if (clipped && drop >= 0) {
      w = w + t * (w_eq - w);
      w[drop] = 0.0;
      active[drop] = 0;
      continue;
    }
    w = w_eq;
    for (int i = 0; i < k; ++i) w[i] = std::max(w[i], 0.0);
    // Optimality over the inactive set: gradient components must not beat
    // the support's common multiplier.
    const Vec grad = 2.0 * (H * w + c);
    int enter = -1;
    double worst = -tol;
    for (int i = 0; i < k; ++i) {
      if (active[i]) continue;
      const double slack = grad[i] + nu;
      if (slack < worst) {
        worst = slack;
        enter = i;
      }
    }
    if (enter < 0) break;
    active[enter] = 1;
  }
  // Exact simplex feasibility.
  double sum = w.sum();
  if (sum <= 0.0) return Vec::Constant(k, 1.0 / k);
  return w / sum;
}

// Nearest point in the convex hull of the columns of W to p:
//     min_w ||W w - p||^2,  w in simplex.
inline HullProjection project_convex_hull(const Mat& W, const Vec& p, const Vec* warm = nullptr) {
  HullProjection out;
  out.weights = simplex_qp(W.transpose() * W, Vec(-(W.transpose() * p)), warm);
  out.point = W * out.weights;
  out.dist = (out.point - p).norm();
  return out;
}

// Exact minimizer of  2 z'u + u'R u  over the box |u| <= u_max, R symmetric
// positive definite. Enumerates active-sign patterns; m is at most a handful
// in this codebase.
inline Vec box_qp(const Mat& R, const Vec& z, const Vec& u_max) {
  const int m = static_cast<int>(z.size());
  if (m > 8) throw QpFailure("box_qp: enumeration limited to m <= 8");
  const double inf = std::numeric_limits<double>::infinity();

  Vec best;
  double best_f = inf;
  std::vector<int> pattern(m, 0);

  const auto eval = [&](const Vec& u) { return 2.0 * z.dot(u) + u.dot(R * u); };

  const long total = static_cast<long>(std::pow(3.0, m));
  for (long code = 0; code < total; ++code) {
    long c = code;
    bool skip = false;
    for (int i = 0; i < m; ++i) {
      pattern[i] = static_cast<int>(c % 3) - 1;  // -1, 0, +1
      c /= 3;
      if (pattern[i] != 0 && !std::isfinite(u_max[i])) skip = true;
    }
    if (skip) continue;

    std::vector<int> free_idx;
    Vec u = Vec::Zero(m);
    for (int i = 0; i < m; ++i) {
      if (pattern[i] == 0)
        free_idx.push_back(i);
      else
        u[i] = pattern[i] * u_max[i];
    }
    const int nf = static_cast<int>(free_idx.size());
    if (nf > 0) {
      Mat Rff(nf, nf);
      Vec rhs(nf);
      for (int a = 0; a < nf; ++a) {
        rhs[a] = -z[free_idx[a]];
        for (int b = 0; b < nf; ++b) Rff(a, b) = R(free_idx[a], free_idx[b]);
        for (int i = 0; i < m; ++i)
          if (pattern[i] != 0) rhs[a] -= R(free_idx[a], i) * u[i];
      }
      const Vec uf = Rff.ldlt().solve(rhs);
      for (int a = 0; a < nf; ++a) u[free_idx[a]] = uf[a];
    }

    // Feasibility and KKT sign checks.
    bool ok = true;
    const Vec grad = 2.0 * (z + R * u);
    for (int i = 0; i < m && ok; ++i) {
      if (pattern[i] == 0) {
        if (std::isfinite(u_max[i]) && std::abs(u[i]) > u_max[i] * (1.0 + 1e-12) + 1e-14) ok = false;
      } else if (pattern[i] > 0) {
        if (grad[i] > 1e-9 * (1.0 + std::abs(grad[i]))) ok = false;
      } else {
        if (grad[i] < -1e-9 * (1.0 + std::abs(grad[i]))) ok = false;
      }
    }
    if (!ok) continue;
    const double f = eval(u);
    if (f < best_f) {
      best_f = f;
      best = u;
    }
  }
  if (best.size() == 0) throw QpFailure("box_qp: no KKT pattern accepted");
  // Snap to the box exactly.
  for (int i = 0; i < m; ++i)
    if (std::isfinite(u_max[i])) best[i] = std::clamp(best[i], -u_max[i], u_max[i]);
  return best;
}

}  // namespace sclf
