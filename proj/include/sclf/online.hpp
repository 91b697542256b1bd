#pragma once

#include <sclf/basis.hpp>
#include <sclf/dynamics.hpp>
#include <sclf/expert.hpp>
#include <sclf/qp.hpp>
#include <sclf/types.hpp>

#include <cmath>
#include <utility>

namespace sclf {

// Cheap feedback laws induced by a synthesized SCLF: all solve
//     min_{u in U}  grad V(x) [A(x) + B(x) u] + g(x, u)
// by increasingly general routes.

enum class ControlMode { Explicit, MinDistance, GenericQp, LocalRefined };

inline const char* to_string(ControlMode m) {
  switch (m) {
    case ControlMode::Explicit: return "explicit";
    case ControlMode::MinDistance: return "min_distance";
    case ControlMode::GenericQp: return "generic_qp";
    case ControlMode::LocalRefined: return "local_refined";
  }
  return "?";
}

class SclfController {
 public:
  SclfController(ControlAffineSystem sys, BasisSet basis, Coefficients alpha, QuadraticCost cost,
                 ControlMode mode, Mat gain = Mat())
      : sys_(std::move(sys)),
        basis_(std::move(basis)),
        alpha_(std::move(alpha)),
        cost_(std::move(cost)),
        mode_(mode),
        gain_(std::move(gain)) {
    validate_coefficients(alpha_, basis_);
    if (!(alpha_[0] > 0.0)) throw ConfigError("SclfController: quadratic coefficient must be > 0");
    if (mode_ == ControlMode::LocalRefined && gain_.size() == 0)
      throw ConfigError("SclfController: LocalRefined requires a gain");
    const Eigen::SelfAdjointEigenSolver<Mat> es(cost_.R);
    if (es.eigenvalues().minCoeff() <= 0.0) throw ConfigError("SclfController: R must be PD");
    r_sqrt_ = es.operatorSqrt();
    r_sqrt_inv_ = es.operatorInverseSqrt();
    r_inv_ = cost_.R.llt().solve(Mat::Identity(cost_.R.rows(), cost_.R.cols()));
    if (sys_.input_set.kind() == InputSet::Kind::PolytopeV) {
      const Mat& W = sys_.input_set.vertex_matrix();
      qp_h_ = W.transpose() * cost_.R * W;          // generic weight-space QP
      md_w_ = r_sqrt_ * W;                          // min-distance transform
      md_gram_ = md_w_.transpose() * md_w_;
    }
  }

  const ControlAffineSystem& system() const { return sys_; }
  const BasisSet& basis() const { return basis_; }
  const Coefficients& alpha() const { return alpha_; }
  const QuadraticCost& cost() const { return cost_; }
  ControlMode mode() const { return mode_; }
  const Mat& gain() const { return gain_; }

  double V(const Vec& x) const { return eval_V(basis_, alpha_, x); }
  Vec gradV(const Vec& x) const { return eval_gradV(basis_, alpha_, x); }

  // z(x) = 1/2 (grad V(x) B(x))'
  Vec half_gradV_B(const Vec& x) const {
    return 0.5 * (sys_.input_map(x).transpose() * gradV(x));
  }

  const Mat& r_sqrt() const { return r_sqrt_; }
  const Mat& r_sqrt_inv() const { return r_sqrt_inv_; }
  const Mat& r_inv() const { return r_inv_; }
  const Mat& qp_h() const { return qp_h_; }
  const Mat& md_w() const { return md_w_; }
  const Mat& md_gram() const { return md_gram_; }

 private:
  ControlAffineSystem sys_;
  BasisSet basis_;
  Coefficients alpha_;
  QuadraticCost cost_;
  ControlMode mode_;
  Mat gain_;
  Mat r_sqrt_, r_sqrt_inv_, r_inv_;
  Mat qp_h_, md_w_, md_gram_;  // cached polytope QP data
};

// Saturated closed form, valid for box inputs with diagonal R:
//     u(x) = sat( -1/2 R^{-1} B(x)' grad V(x)' ).
inline Vec control_explicit(const SclfController& ctrl, const Vec& x) {
  if (ctrl.system().input_set.kind() != InputSet::Kind::Box)
    throw ModeMismatch("control_explicit: box input set required");
  if (!ctrl.cost().r_diagonal())
    throw ModeMismatch("control_explicit: diagonal R required");
  const Vec z = ctrl.half_gradV_B(x);
  Vec u = -(ctrl.r_inv() * z);
  const Vec& umax = ctrl.system().input_set.u_max();
  for (Eigen::Index i = 0; i < u.size(); ++i)
    if (std::isfinite(umax[i])) u[i] = std::clamp(u[i], -umax[i], umax[i]);
  return u;
}

// Polytope inputs, any PD R: with v = R^{1/2} u the problem reduces to
// projecting -R^{-1/2} z onto R^{1/2} U.
inline Vec control_min_distance(const SclfController& ctrl, const Vec& x) {
  const InputSet& uset = ctrl.system().input_set;
  if (uset.kind() != InputSet::Kind::PolytopeV)
    throw ModeMismatch("control_min_distance: polytope input set required");
  const Vec z = ctrl.half_gradV_B(x);
  const Vec u_free = -(ctrl.r_inv() * z);
  if (uset.contains(u_free)) return u_free;  // interior: the unconstrained minimizer

  const Vec p = ctrl.r_sqrt() * u_free;  // = -R^{-1/2} z
  const Vec w = simplex_qp(ctrl.md_gram(), Vec(-(ctrl.md_w().transpose() * p)));
  return ctrl.r_sqrt_inv() * (ctrl.md_w() * w);
}

// General route: exact active-set enumeration on the box, weight-space QP on
// the polytope. Agrees with the specialized paths where both apply.
inline Vec control_generic_qp(const SclfController& ctrl, const Vec& x) {
  const InputSet& uset = ctrl.system().input_set;
  const Vec z = ctrl.half_gradV_B(x);
  if (z.norm() == 0.0) return Vec::Zero(z.size());  // grad V = 0: minimizer of u'Ru
  if (uset.kind() == InputSet::Kind::Box) return box_qp(ctrl.cost().R, z, uset.u_max());

  // min over the simplex of 2 z'(W w) + (W w)' R (W w)
  const Mat& W = uset.vertex_matrix();
  const Vec w = simplex_qp(ctrl.qp_h(), Vec(W.transpose() * z));
  return W * w;
}

// Local refinement around the Riccati gain: u = Kx + v with the minimum-norm
// v keeping u in U and satisfying the completed-square decrease inequality.
// Falls back to the generic QP when the quadratic constraint cannot be met.
inline Vec control_local_refined(const SclfController& ctrl, const Vec& x,
                                 bool* fell_back = nullptr) {
  if (ctrl.mode() != ControlMode::LocalRefined || ctrl.gain().size() == 0)
    throw ModeMismatch("control_local_refined: controller lacks a gain");
  if (fell_back) *fell_back = false;
  const InputSet& uset = ctrl.system().input_set;
  const Vec z = ctrl.half_gradV_B(x);
  const Vec kx = ctrl.gain() * x;
  const Vec grad_v = ctrl.gradV(x);
  const Vec a_x = ctrl.system().drift(x);
  const Vec c = kx + ctrl.r_inv() * z;  // quad constraint: |R^{1/2}(v + c)|^2 <= rhs
  const double rhs = -x.dot(ctrl.cost().Q * x) - grad_v.dot(a_x) +
                     (ctrl.r_sqrt_inv() * z).squaredNorm();
  // Rounding slack on the scale of the completed square: the inequality is
  // exactly tight along the Riccati gain on linear dynamics.
  const double eps_c = 1e-9 * (1.0 + std::abs(x.dot(ctrl.cost().Q * x)) +
                               std::abs(grad_v.dot(a_x)) +
                               (ctrl.r_sqrt_inv() * z).squaredNorm());

  const auto quad_of = [&](const Vec& v) { return (ctrl.r_sqrt() * (v + c)).squaredNorm(); };
  const auto in_set = [&](const Vec& v) { return uset.contains(kx + v, 1e-9); };

  // v = 0 works in a neighborhood of the origin.
  if (in_set(Vec::Zero(kx.size())) && quad_of(Vec::Zero(kx.size())) <= rhs + eps_c) return kx;

  // A known-feasible anchor: the generic minimizer satisfies the inequality
  // whenever the certificate holds at x.
  const Vec u_qp = control_generic_qp(ctrl, x);
  const Vec v_anchor = u_qp - kx;
  if (quad_of(v_anchor) > rhs + eps_c) {
    if (fell_back) *fell_back = true;
    return u_qp;
  }

  // Minimize the quadratic over {|v| <= t} ∩ {Kx + v in U} by projected
  // gradient with Dykstra projections onto the intersection.
  const auto project_ct = [&](Vec v, double t) {
    Vec p_ball = Vec::Zero(v.size());
    Vec p_set = Vec::Zero(v.size());
    for (int it = 0; it < 60; ++it) {
      Vec y = v + p_ball;
      const double nrm = y.norm();
      Vec v1 = (nrm > t && nrm > 0.0) ? Vec((t / nrm) * y) : y;
      p_ball = y - v1;
      y = v1 + p_set;
      Vec v2 = uset.project(kx + y) - kx;
      p_set = y - v2;
      if ((v2 - v).norm() <= 1e-12 * (1.0 + t)) return v2;
      v = v2;
    }
    return v;
  };
  const auto min_quad_in = [&](double t, Vec v0) {
    const double lip = 2.0 * ctrl.cost().R.norm();
    Vec v = project_ct(std::move(v0), t);
    for (int it = 0; it < 400; ++it) {
      const Vec grad = 2.0 * (ctrl.cost().R * (v + c));
      const Vec trial = project_ct(v - grad / lip, t);
      if ((trial - v).norm() <= 1e-11 * (1.0 + t)) { v = trial; break; }
      v = trial;
    }
    return v;
  };

  double lo = 0.0, hi = v_anchor.norm();
  Vec best_v = v_anchor;
  for (int it = 0; it < 40; ++it) {
    const double mid = 0.5 * (lo + hi);
    const Vec v = min_quad_in(mid, best_v);
    if (quad_of(v) <= rhs + 1e-10 * (1.0 + std::abs(rhs)) && in_set(v)) {
      hi = mid;
      best_v = v;
    } else {
      lo = mid;
    }
  }
  return kx + best_v;
}

inline Vec control(const SclfController& ctrl, const Vec& x) {
  switch (ctrl.mode()) {
    case ControlMode::Explicit: return control_explicit(ctrl, x);
    case ControlMode::MinDistance: return control_min_distance(ctrl, x);
    case ControlMode::GenericQp: return control_generic_qp(ctrl, x);
    case ControlMode::LocalRefined: return control_local_refined(ctrl, x);
  }
  throw InternalError("control: unknown mode");
}

// Runtime stability indicator Theta(x) = grad V (A + Bu) + g(x, u);
// non-positivity certifies the decrease under the deployed control.
inline double theta_indicator(const SclfController& ctrl, const Vec& x, const Vec& u) {
  const Vec f = eval_dynamics(ctrl.system(), x, u);
  return ctrl.gradV(x).dot(f) + ctrl.cost().eval(x, u);
}

// Suboptimality ratio V(x0) / Psi_T(x0); 1 at the origin by convention.
inline double performance_loss(const SclfController& ctrl, const ExpertController& expert,
                               const Vec& x0) {
  if (x0.norm() == 0.0) return 1.0;
  const double psi = expert.psi_T(x0);
  if (psi == 0.0) return 1.0;
  return ctrl.V(x0) / psi;
}

}  // namespace sclf
