#pragma once

#include <sclf/lp.hpp>
#include <sclf/qp.hpp>
#include <sclf/rng.hpp>
#include <sclf/types.hpp>

#include <cmath>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace sclf {

// ---------------------------------------------------------------------------
// Input constraint sets

class InputSet {
 public:
  enum class Kind { Box, PolytopeV };

  static InputSet box(Vec u_max) {
    for (Eigen::Index i = 0; i < u_max.size(); ++i)
      if (!(u_max[i] > 0.0)) throw ConfigError("InputSet::box: u_max entries must be > 0");
    InputSet s;
    s.kind_ = Kind::Box;
    s.u_max_ = std::move(u_max);
    return s;
  }

  static InputSet polytope(std::vector<Vec> vertices) {
    if (vertices.empty()) throw ConfigError("InputSet::polytope: empty vertex list");
    const Eigen::Index m = vertices.front().size();
    for (const auto& v : vertices)
      if (v.size() != m) throw DimensionMismatch("InputSet::polytope: ragged vertex list");
    if (static_cast<Eigen::Index>(vertices.size()) < m + 1)
      throw ConfigError("InputSet::polytope: need at least m+1 vertices");
    InputSet s;
    s.kind_ = Kind::PolytopeV;
    s.vertices_ = std::move(vertices);
    s.w_mat_.resize(m, s.vertices_.size());
    for (std::size_t j = 0; j < s.vertices_.size(); ++j) s.w_mat_.col(j) = s.vertices_[j];
    s.gram_ = s.w_mat_.transpose() * s.w_mat_;
    if (!s.contains(Vec::Zero(m)))
      throw ConfigError("InputSet::polytope: origin not in the convex hull");
    return s;
  }

  Kind kind() const { return kind_; }
  int dim() const {
    return kind_ == Kind::Box ? static_cast<int>(u_max_.size())
                              : static_cast<int>(vertices_.front().size());
  }
  const Vec& u_max() const { return u_max_; }
  const std::vector<Vec>& vertices() const { return vertices_; }

  const Mat& vertex_matrix() const { return w_mat_; }

  // Box: componentwise. Polytope: feasibility LP over convex-combination
  // weights (exists w >= 0, sum w = 1, V w = u).
  bool contains(const Vec& u, double tol = 1e-8) const {
    if (kind_ == Kind::Box) {
      for (Eigen::Index i = 0; i < u.size(); ++i)
        if (std::abs(u[i]) > u_max_[i] + tol) return false;
      return true;
    }
    const int m = dim();
    const int k = static_cast<int>(vertices_.size());
    LpProblem lp;
    lp.c = Vec::Zero(k);
    lp.A_eq = Mat::Ones(m + 1, k);
    lp.A_eq.topRows(m) = vertex_matrix();
    lp.b_eq = Vec::Ones(m + 1);
    lp.b_eq.head(m) = u;
    return solve_lp(lp, tol).status == LpStatus::Optimal;
  }

  // Euclidean projection into the set.
  Vec project(const Vec& u, Vec* warm_weights = nullptr) const {
    if (kind_ == Kind::Box) {
      Vec out = u;
      for (Eigen::Index i = 0; i < u.size(); ++i) {
        if (std::isfinite(u_max_[i])) out[i] = std::clamp(out[i], -u_max_[i], u_max_[i]);
      }
      return out;
    }
    const Vec w = simplex_qp(gram_, Vec(-(w_mat_.transpose() * u)), warm_weights);
    if (warm_weights) *warm_weights = w;
    const Vec point = w_mat_ * w;
    if ((point - u).norm() <= 1e-9) return u;  // interior: identity
    return point;
  }

  std::string describe() const {
    std::ostringstream os;
    os.precision(17);
    if (kind_ == Kind::Box) {
      os << "box:";
      for (Eigen::Index i = 0; i < u_max_.size(); ++i) os << " " << u_max_[i];
    } else {
      os << "polytope:";
      for (const auto& v : vertices_) {
        os << " [";
        for (Eigen::Index i = 0; i < v.size(); ++i) os << v[i] << (i + 1 < v.size() ? "," : "");
        os << "]";
      }
    }
    return os.str();
  }

 private:
  Kind kind_ = Kind::Box;
  Vec u_max_;
  std::vector<Vec> vertices_;
  Mat w_mat_;  // vertices as columns
  Mat gram_;   // W'W, cached for the projection QP
};

// ---------------------------------------------------------------------------
// State domain

struct DomainBox {
  Vec lo, hi;

  DomainBox() = default;
  DomainBox(Vec lo_, Vec hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw DimensionMismatch("DomainBox: lo/hi size");
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      if (!(lo[i] < hi[i])) throw ConfigError("DomainBox: lo must be < hi");
      if (!(lo[i] < 0.0 && 0.0 < hi[i]))
        throw ConfigError("DomainBox: origin must be strictly inside");
    }
  }

  static DomainBox symmetric(const Vec& halfwidth) { return DomainBox(-halfwidth, halfwidth); }

  int dim() const { return static_cast<int>(lo.size()); }

  bool contains(const Vec& x, double inflate = 1.0) const {
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if (x[i] < inflate * lo[i] || x[i] > inflate * hi[i]) return false;
    return true;
  }

  Vec clamp(const Vec& x) const {
    Vec out = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = std::clamp(out[i], lo[i], hi[i]);
    return out;
  }

  Vec halfwidth() const { return 0.5 * (hi - lo); }

  // Circumscribed radius (farthest corner from the origin).
  double radius() const {
    double s = 0.0;
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
      const double m = std::max(std::abs(lo[i]), std::abs(hi[i]));
      s += m * m;
    }
    return std::sqrt(s);
  }

  Vec sample(Rng& rng) const {
    Vec x(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) x[i] = rng.uniform(lo[i], hi[i]);
    return x;
  }
};

// ---------------------------------------------------------------------------
// Control-affine system  dx/dt = A(x) + B(x) u

struct ControlAffineSystem {
  std::string name;
  int n = 0;
  int m = 0;
  std::function<Vec(const Vec&)> drift;      // A(x), with A(0) = 0
  std::function<Mat(const Vec&)> input_map;  // B(x), n x m
  // Optional analytic Jacobian of f(x, u) = A(x) + B(x)u with respect to x;
  // consumers fall back to central differences when unset.
  std::function<Mat(const Vec&, const Vec&)> jac_x;
  InputSet input_set;
  DomainBox domain;
  // Expert rollouts are trusted inside this inflation of the domain box.
  // Systems with poles near the domain (the bioreactor) need a tight value
  // to keep the Euler map honest; plain mechanical chains can roam.
  double trust_inflate = 10.0;
  Vec drift_offset;  // constant removed from the raw drift so that A(0) = 0
  std::string fingerprint_payload;

  std::uint64_t fingerprint() const { return fnv1a(fingerprint_payload); }
};

inline Vec eval_dynamics(const ControlAffineSystem& sys, const Vec& x, const Vec& u) {
  require_dim(x, sys.n, "eval_dynamics x");
  require_dim(u, sys.m, "eval_dynamics u");
  const Vec a = sys.drift(x);
  const Mat b = sys.input_map(x);
  if (!all_finite(a) || !all_finite(b)) throw NonFiniteResult("eval_dynamics: NaN/Inf in A(x) or B(x)");
  return a + b * u;
}

// Jacobians of the dynamics at (0, 0) by central finite differences. The step
// is scaled per coordinate by max(1, domain halfwidth).
inline std::pair<Mat, Mat> linearize(const ControlAffineSystem& sys, double h = 1e-5) {
  const int n = sys.n, m = sys.m;
  const Vec hw = sys.domain.halfwidth();
  const Vec u0 = Vec::Zero(m);
  Mat Abar(n, n), Bbar(n, m);
  for (int j = 0; j < n; ++j) {
    const double hj = h * std::max(1.0, hw[j]);
    Vec xp = Vec::Zero(n), xm = Vec::Zero(n);
    xp[j] = hj;
    xm[j] = -hj;
    Abar.col(j) = (eval_dynamics(sys, xp, u0) - eval_dynamics(sys, xm, u0)) / (2.0 * hj);
  }
  const Vec x0 = Vec::Zero(n);
  for (int j = 0; j < m; ++j) {
    const double hj = h;
    Vec up = Vec::Zero(m), um = Vec::Zero(m);
    up[j] = hj;
    um[j] = -hj;
    Bbar.col(j) = (eval_dynamics(sys, x0, up) - eval_dynamics(sys, x0, um)) / (2.0 * hj);
  }
  if (!all_finite(Abar) || !all_finite(Bbar)) throw NonFiniteResult("linearize: NaN/Inf");
  return {Abar, Bbar};
}

// ---------------------------------------------------------------------------
// Benchmark systems

// Two-state bioreactor in deviation coordinates; dimensionless flow-rate
// input. The stated parameters leave a small nonzero drift at the origin,
// which is removed as a constant offset (recorded in drift_offset).
inline ControlAffineSystem make_bioreactor() {
  const double gamma = 0.4, beta = 0.02, da_s = 1.2, c1s = 0.0938, c2s = 0.9155;

  const auto raw_drift = [=](const Vec& x) {
    const double e = da_s * (1.0 - x[1] - c2s) * std::exp((c2s + x[1]) / gamma);
    Vec a(2);
    a[0] = -(c1s + x[0]) + e * (c1s + x[0]);
    a[1] = -(c2s + x[1]) + e * (1.0 + beta) * (c1s + x[0]) / (1.0 + beta - x[1] - c2s);
    return a;
  };
  const Vec offset = raw_drift(Vec::Zero(2));

  ControlAffineSystem sys;
  sys.name = "bioreactor";
  sys.n = 2;
  sys.m = 1;
  sys.drift = [=](const Vec& x) { return (raw_drift(x) - offset).eval(); };
  sys.input_map = [=](const Vec& x) {
    Mat b(2, 1);
    b(0, 0) = -(c1s + x[0]);
    b(1, 0) = -(c2s + x[1]);
    return b;
  };
  sys.jac_x = [=](const Vec& x, const Vec& u) {
    const double e = da_s * (1.0 - x[1] - c2s) * std::exp((c2s + x[1]) / gamma);
    const double de = da_s * std::exp((c2s + x[1]) / gamma) * (-1.0 + (1.0 - x[1] - c2s) / gamma);
    const double d = 1.0 + beta - x[1] - c2s;
    Mat j(2, 2);
    j(0, 0) = -(1.0 + u[0]) + e;
    j(0, 1) = (c1s + x[0]) * de;
    j(1, 0) = e * (1.0 + beta) / d;
    j(1, 1) = -(1.0 + u[0]) + (1.0 + beta) * (c1s + x[0]) * (de * d + e) / (d * d);
    return j;
  };
  sys.input_set = InputSet::box(Vec::Ones(1));
  sys.domain = DomainBox::symmetric(Vec::Constant(2, 0.1));
  sys.trust_inflate = 3.0;  // model pole just past x2 = 0.1
  sys.drift_offset = offset;
  sys.fingerprint_payload =
      "bioreactor gamma=0.4 beta=0.02 DaS=1.2 C1S=0.0938 C2S=0.9155 umax=1 dom=0.1 trust=3";
  return sys;
}

// Planar VTOL error dynamics, interleaved state (pos1, vel1, pos2, vel2,
// roll, roll rate); input u = f - f_e with box bounds (3, 2).
inline ControlAffineSystem make_vtol() {
  const double eps = 0.2;

  ControlAffineSystem sys;
  sys.name = "vtol";
  sys.n = 6;
  sys.m = 2;
  sys.drift = [](const Vec& x) {
    Vec a(6);
    a[0] = x[1];
    a[1] = -std::sin(x[4]);
    a[2] = x[3];
    a[3] = std::cos(x[4]) - 1.0;
    a[4] = x[5];
    a[5] = 0.0;
    return a;
  };
  sys.input_map = [=](const Vec& x) {
    Mat b = Mat::Zero(6, 2);
    b(1, 0) = -std::sin(x[4]);
    b(1, 1) = eps * std::cos(x[4]);
    b(3, 0) = std::cos(x[4]);
    b(3, 1) = eps * std::sin(x[4]);
    b(5, 1) = 1.0;
    return b;
  };
  sys.jac_x = [=](const Vec& x, const Vec& u) {
    Mat j = Mat::Zero(6, 6);
    j(0, 1) = j(2, 3) = j(4, 5) = 1.0;
    j(1, 4) = -(u[0] + 1.0) * std::cos(x[4]) - u[1] * eps * std::sin(x[4]);
    j(3, 4) = -(u[0] + 1.0) * std::sin(x[4]) + u[1] * eps * std::cos(x[4]);
    return j;
  };
  Vec umax(2);
  umax << 3.0, 2.0;
  sys.input_set = InputSet::box(umax);
  Vec hw(6);
  hw << 1.0, 0.5, 1.0, 0.5, M_PI / 3.0, M_PI / 6.0;
  sys.domain = DomainBox::symmetric(hw);
  sys.drift_offset = Vec::Zero(6);
  sys.fingerprint_payload = "vtol eps=0.2 umax=3,2 dom=1,0.5,1,0.5,pi/3,pi/6";
  return sys;
}

inline double drone_gravity() { return 9.81; }

// Feedback-linearized quadcopter outer loop: triple double-integrator with
// the thrust/tilt constraint under-approximated by a vertex polytope.
inline ControlAffineSystem make_drone() {
  const double g = drone_gravity();
  const double f_bar = 1.45 * g;
  const double eps_bar = 0.1745;
  const double r_star = f_bar * std::sin(eps_bar);
  const double u3_star = f_bar * std::cos(eps_bar) - g;
  const int s1 = 8, s2 = 2;

  std::vector<Vec> verts;
  Vec v0(3);
  v0 << 0.0, 0.0, -g;
  verts.push_back(v0);
  const auto push_unique = [&](const Vec& v) {
    for (const auto& w : verts)
      if ((w - v).norm() <= 1e-9 * (1.0 + v.norm())) return;
    verts.push_back(v);
  };
  // mu and r evenly sampled on closed intervals, endpoints included.
  for (int i = 0; i < s1; ++i) {
    const double mu = 2.0 * M_PI * i / (s1 - 1);
    Vec v(3);
    v << r_star * std::cos(mu), r_star * std::sin(mu), u3_star;
    push_unique(v);
  }
  for (int j = 0; j < s2; ++j) {
    const double r = r_star * j / (s2 - 1);
    for (int i = 0; i < s1; ++i) {
      const double mu = 2.0 * M_PI * i / (s1 - 1);
      Vec v(3);
      v << r * std::cos(mu), r * std::sin(mu), std::sqrt(f_bar * f_bar - r * r) - g;
      push_unique(v);
    }
  }

  ControlAffineSystem sys;
  sys.name = "drone";
  sys.n = 6;
  sys.m = 3;
  sys.drift = [](const Vec& x) {
    Vec a(6);
    a[0] = x[3];
    a[1] = x[4];
    a[2] = x[5];
    a[3] = a[4] = a[5] = 0.0;
    return a;
  };
  sys.input_map = [](const Vec&) {
    Mat b = Mat::Zero(6, 3);
    b.bottomRows(3) = Mat::Identity(3, 3);
    return b;
  };
  sys.jac_x = [](const Vec&, const Vec&) {
    Mat j = Mat::Zero(6, 6);
    j.topRightCorner(3, 3) = Mat::Identity(3, 3);
    return j;
  };
  sys.input_set = InputSet::polytope(verts);
  sys.domain = DomainBox::symmetric(Vec::Constant(6, 1.5));
  sys.drift_offset = Vec::Zero(6);
  {
    std::ostringstream os;
    os.precision(17);
    os << "drone g=" << g << " Fbar=" << f_bar << " epsbar=" << eps_bar
       << " S1=" << s1 << " S2=" << s2 << " dom=1.5";
    sys.fingerprint_payload = os.str();
  }
  return sys;
}

// ---------------------------------------------------------------------------
// Thrust/attitude recovered from the linearizing transformation; exported for
// telemetry only, the simulation runs on the linearized chain.

struct DroneInputs {
  double thrust;  // F
  double phi;     // roll
  double theta;   // pitch
};

inline DroneInputs drone_input_transform(const Vec& u, double psi) {
  require_dim(u, 3, "drone_input_transform u");
  const double g = drone_gravity();
  if (!(u[2] + g > 0.0)) throw SingularTransform("drone_input_transform: u3 + g <= 0");
  DroneInputs out;
  out.thrust = std::sqrt(u[0] * u[0] + u[1] * u[1] + (u[2] + g) * (u[2] + g));
  out.phi = std::asin((u[0] * std::sin(psi) - u[1] * std::cos(psi)) / out.thrust);
  out.theta = std::atan((u[0] * std::cos(psi) + u[1] * std::sin(psi)) / (u[2] + g));
  return out;
}

}  // namespace sclf
