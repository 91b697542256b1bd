#pragma once

#include <sclf/types.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <utility>

namespace sclf {

// Solves A'S + SA = -W for symmetric S by Kronecker vectorization:
// (I (x) A' + A' (x) I) vec(S) = vec(-W). O(n^6), trivial at n <= 6.
inline Mat solve_lyapunov(const Mat& A, const Mat& W) {
  const int n = static_cast<int>(A.rows());
  Mat K = Mat::Zero(n * n, n * n);
  for (int j = 0; j < n; ++j) K.block(j * n, j * n, n, n) += A.transpose();
  for (int j = 0; j < n; ++j)
    for (int l = 0; l < n; ++l)
      for (int d = 0; d < n; ++d) K(j * n + d, l * n + d) += A(l, j);
  Vec rhs(n * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) rhs[j * n + i] = -W(i, j);
  const Vec s = K.fullPivLu().solve(rhs);
  Mat S(n, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) S(i, j) = s[j * n + i];
  return 0.5 * (S + S.transpose());
}

inline double max_real_eig(const Mat& A) {
  Eigen::EigenSolver<Mat> es(A, false);
  double mx = -std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < A.rows(); ++i) mx = std::max(mx, es.eigenvalues()[i].real());
  return mx;
}

inline Mat care_residual(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, const Mat& S) {
  return A.transpose() * S + S * A - S * B * R.llt().solve(B.transpose() * S) + Q;
}

struct CareSolution {
  Mat S;  // stabilizing solution, symmetric positive definite
  Mat K;  // K = -R^{-1} B' S, so that A + B K is Hurwitz
  double residual_fro;
  int newton_iters;
};

// Continuous-time algebraic Riccati equation
//     A'S + SA - S B R^{-1} B' S + Q = 0.
// A stabilizing initializer is found by integrating the Riccati ODE
// dS/dt = A'S + SA - S B R^{-1} B' S + Q forward until the residual stops
// decreasing, then polished by Newton-Kleinman (each step one Lyapunov
// solve).
inline CareSolution solve_care(const Mat& A, const Mat& B, const Mat& Q, const Mat& R) {
  const int n = static_cast<int>(A.rows());
  const Mat Rinv_Bt = R.llt().solve(B.transpose());
  const double q_norm = std::max(Q.norm(), 1e-30);

  const auto riccati_rhs = [&](const Mat& S) -> Mat {
    return A.transpose() * S + S * A - S * B * (Rinv_Bt * S) + Q;
  };

  // Forward integration (RK4) from S = 0; the flow converges toward the
  // stabilizing solution whenever one exists. The residual can grow through
  // the initial transient, so the stall guard needs a long leash.
  Mat S = Mat::Zero(n, n);
  Mat best_S = S;
  double best_res = riccati_rhs(S).norm();
  const double a_scale = std::max(1.0, A.norm() + B.norm() * Rinv_Bt.norm() * best_res);
  double dt = 0.05 / a_scale;
  int stall = 0;
  for (int it = 0; it < 60000; ++it) {
    const Mat k1 = riccati_rhs(S);
    const Mat k2 = riccati_rhs(S + 0.5 * dt * k1);
    const Mat k3 = riccati_rhs(S + 0.5 * dt * k2);
    const Mat k4 = riccati_rhs(S + dt * k3);
    Mat S_next = S + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    S_next = 0.5 * (S_next + S_next.transpose());
    if (!all_finite(S_next) || S_next.norm() > 1e12) {
      S.setZero();
      stall = 0;
      dt *= 0.5;
      if (dt < 1e-12) throw NotStabilizable("solve_care: Riccati ODE diverged");
      continue;
    }
    S = S_next;
    const double res = riccati_rhs(S).norm();
    if (res < best_res) {
      best_res = res;
      best_S = S;
      stall = 0;
    } else if (++stall > 3000) {
      break;
    }
    if (res <= 1e-10 * q_norm) break;
  }

  Mat K = -(Rinv_Bt * best_S);
  if (max_real_eig(A + B * K) >= 0.0)
    throw NotStabilizable("solve_care: no stabilizing initializer found");

  // Newton-Kleinman: quadratic convergence from a stabilizing gain.
  CareSolution out;
  out.newton_iters = 0;
  Mat S_nk = best_S;
  for (int it = 0; it < 60; ++it) {
    const Mat Acl = A + B * K;
    const Mat W = Q + K.transpose() * R * K;
    S_nk = solve_lyapunov(Acl, W);
    K = -(Rinv_Bt * S_nk);
    ++out.newton_iters;
    const double res = care_residual(A, B, Q, R, S_nk).norm();
    if (res <= 1e-13 * q_norm) break;
  }
  out.S = 0.5 * (S_nk + S_nk.transpose());
  out.K = -(Rinv_Bt * out.S);
  out.residual_fro = care_residual(A, B, Q, R, out.S).norm();
  if (!all_finite(out.S) || out.residual_fro > 1e-8 * q_norm)
    throw IllConditioned("solve_care: residual did not converge");
  if (max_real_eig(A + B * out.K) >= -1e-9)
    throw NotStabilizable("solve_care: closed loop not Hurwitz");
  // Positive definiteness of the stabilizing solution.
  Eigen::LLT<Mat> llt(out.S);
  if (llt.info() != Eigen::Success)
    throw IllConditioned("solve_care: S not positive definite");
  return out;
}

}  // namespace sclf
