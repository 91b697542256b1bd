#pragma once

#include <sclf/basis.hpp>
#include <sclf/dynamics.hpp>
#include <sclf/expert.hpp>
#include <sclf/rng.hpp>

#include <cmath>
#include <functional>
#include <vector>

namespace sclf::test {

// Central-difference gradient of a scalar field; independent oracle for the
// analytic gradients under test.
inline Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-6) {
  Vec g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vec xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// Scalar single integrator dx/dt = u with |u| <= 1; the smallest nontrivial
// constrained benchmark.
inline ControlAffineSystem make_scalar_integrator(double u_max = 1.0, double dom = 1.0) {
  ControlAffineSystem sys;
  sys.name = "scalar_integrator";
  sys.n = 1;
  sys.m = 1;
  sys.drift = [](const Vec& x) { return Vec::Zero(1).eval(); };
  sys.input_map = [](const Vec&) { return Mat::Ones(1, 1).eval(); };
  sys.input_set = InputSet::box(Vec::Constant(1, u_max));
  sys.domain = DomainBox::symmetric(Vec::Constant(1, dom));
  sys.drift_offset = Vec::Zero(1);
  sys.fingerprint_payload = "scalar_integrator";
  return sys;
}

inline ControlAffineSystem make_double_integrator(double u_max = 4.0, double dom = 1.0) {
  ControlAffineSystem sys;
  sys.name = "double_integrator";
  sys.n = 2;
  sys.m = 1;
  sys.drift = [](const Vec& x) {
    Vec a(2);
    a << x[1], 0.0;
    return a;
  };
  sys.input_map = [](const Vec&) {
    Mat b(2, 1);
    b << 0.0, 1.0;
    return b;
  };
  sys.input_set = InputSet::box(Vec::Constant(1, u_max));
  sys.domain = DomainBox::symmetric(Vec::Constant(2, dom));
  sys.drift_offset = Vec::Zero(2);
  sys.fingerprint_payload = "double_integrator";
  return sys;
}

inline ExpertController quick_expert(const ControlAffineSystem& sys, const QuadraticCost& cost,
                                     double horizon, double tau_s, double tol = 1e-7,
                                     int max_iters = 600) {
  const auto [abar, bbar] = linearize(sys);
  OcpConfig cfg;
  cfg.horizon = horizon;
  cfg.tau_s = tau_s;
  cfg.tol = tol;
  cfg.max_iters = max_iters;
  return ExpertController(sys, cost, make_terminal_ingredients(sys, cost, abar, bbar), cfg);
}

}  // namespace sclf::test
