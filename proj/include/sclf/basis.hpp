#pragma once

#include <sclf/dynamics.hpp>
#include <sclf/rng.hpp>
#include <sclf/types.hpp>

#include <cmath>
#include <cstdint>
#include <vector>

namespace sclf {

// SCLF parameterization V(x) = sum_k alpha_k V_k(x) over a quadratic form
// plus 2p-norm-like polynomials (a'x)^{2p}.

struct BasisFunction {
  enum class Type { QuadraticForm, PowerForm };
  Type type = Type::PowerForm;
  Mat P;      // QuadraticForm weight, symmetric positive definite
  Vec a;      // PowerForm direction (scaled)
  int p = 2;  // PowerForm half-degree

  static BasisFunction quadratic(Mat P_in) {
    Eigen::LLT<Mat> llt(P_in);
    if (llt.info() != Eigen::Success) throw DegenerateP("BasisFunction: P not positive definite");
    BasisFunction f;
    f.type = Type::QuadraticForm;
    f.P = 0.5 * (P_in + P_in.transpose());
    return f;
  }

  static BasisFunction power(Vec a_in, int p_in) {
    if (a_in.norm() == 0.0) throw ConfigError("BasisFunction: zero direction");
    if (p_in < 1) throw ConfigError("BasisFunction: p must be >= 1");
    BasisFunction f;
    f.type = Type::PowerForm;
    f.a = std::move(a_in);
    f.p = p_in;
    return f;
  }
};

inline double eval_basis(const BasisFunction& f, const Vec& x) {
  if (f.type == BasisFunction::Type::QuadraticForm) {
    require_dim(x, f.P.rows(), "eval_basis x");
    return x.dot(f.P * x);
  }
  require_dim(x, f.a.size(), "eval_basis x");
  return std::pow(f.a.dot(x), 2 * f.p);
}

inline Vec eval_gradient(const BasisFunction& f, const Vec& x) {
  if (f.type == BasisFunction::Type::QuadraticForm) {
    require_dim(x, f.P.rows(), "eval_gradient x");
    return 2.0 * (f.P * x);
  }
  require_dim(x, f.a.size(), "eval_gradient x");
  const double s = f.a.dot(x);
  return (2.0 * f.p * std::pow(s, 2 * f.p - 1)) * f.a;
}

struct BasisSet {
  std::vector<BasisFunction> functions;
  std::uint64_t seed = 0;
  int dim = 0;

  int size() const { return static_cast<int>(functions.size()); }
};

using Coefficients = Vec;

inline void validate_coefficients(const Coefficients& alpha, const BasisSet& basis) {
  require_dim(alpha, basis.size(), "coefficients");
  for (Eigen::Index i = 0; i < alpha.size(); ++i)
    if (alpha[i] < 0.0) throw ConfigError("coefficients must be nonnegative");
}

// Direction scales chosen so a'x = O(1) on the domain; keeps the LP columns
// comparable in magnitude.
inline std::vector<double> default_scales(const DomainBox& domain) {
  const double rho = domain.radius();
  return {1.0 / rho, 0.5 / rho};
}

// Quadratic form first, then per scale: the 2n signed axis directions
// followed by `directions` seeded random unit-sphere directions, so
// N = 1 + directions*|scales| + 2n*|scales|. Random draws that land within
// the duplicate tolerance of an existing same-norm direction are redrawn
// (duplicate columns degenerate the LP). The signed axis pairs are kept even
// though the even power makes +-a the same function.
inline BasisSet generate_basis(int n, const Mat& P, int directions,
                               const std::vector<double>& scales, int p, std::uint64_t seed) {
  BasisSet set;
  set.seed = seed;
  set.dim = n;
  set.functions.push_back(BasisFunction::quadratic(P));

  const auto collides = [&](const Vec& a) {
    const double na = a.norm();
    for (const auto& f : set.functions) {
      if (f.type != BasisFunction::Type::PowerForm) continue;
      const double nf = f.a.norm();
      if (std::abs(na - nf) > 1e-9 * (1.0 + na)) continue;
      if (std::abs(f.a.dot(a)) / (na * nf) > 1.0 - 1e-9) return true;
    }
    return false;
  };

  Rng rng(seed);
  for (const double scale : scales) {
    for (int i = 0; i < n; ++i) {
      for (const double sign : {1.0, -1.0}) {
        Vec a = Vec::Zero(n);
        a[i] = sign * scale;
        set.functions.push_back(BasisFunction::power(a, p));
      }
    }
    for (int k = 0; k < directions; ++k) {
      Vec a;
      int guard = 0;
      do {
        a = scale * rng.unit_sphere(n);
        if (++guard > 10000)
          throw ConfigError("generate_basis: direction space exhausted at this tolerance");
      } while (collides(a));
      set.functions.push_back(BasisFunction::power(a, p));
    }
  }
  return set;
}

inline double eval_V(const BasisSet& basis, const Coefficients& alpha, const Vec& x) {
  require_dim(alpha, basis.size(), "eval_V alpha");
  double v = 0.0;
  for (int k = 0; k < basis.size(); ++k)
    if (alpha[k] != 0.0) v += alpha[k] * eval_basis(basis.functions[k], x);
  return v;
}

inline Vec eval_gradV(const BasisSet& basis, const Coefficients& alpha, const Vec& x) {
  require_dim(alpha, basis.size(), "eval_gradV alpha");
  Vec g = Vec::Zero(x.size());
  for (int k = 0; k < basis.size(); ++k)
    if (alpha[k] != 0.0) g += alpha[k] * eval_gradient(basis.functions[k], x);
  return g;
}

}  // namespace sclf
