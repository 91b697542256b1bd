#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace sclf {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using StateVec = Vec;
using ControlVec = Vec;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error { using Error::Error; };
struct NonFiniteResult : Error { using Error::Error; };
struct NonFiniteState : Error { using Error::Error; };
struct SingularTransform : Error { using Error::Error; };
struct NotStabilizable : Error { using Error::Error; };
struct IllConditioned : Error { using Error::Error; };
struct NoValidKappa : Error { using Error::Error; };
struct ModeMismatch : Error { using Error::Error; };
struct QpFailure : Error { using Error::Error; };
struct ProjectionFailure : Error { using Error::Error; };
struct DegenerateP : Error { using Error::Error; };
struct AllPruned : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct ArtifactError : Error { using Error::Error; };
struct InternalError : Error { using Error::Error; };

inline bool all_finite(const Vec& v) { return v.allFinite(); }
inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline void require_dim(const Vec& v, Eigen::Index n, const char* what) {
  if (v.size() != n)
    throw DimensionMismatch(std::string(what) + ": expected length " +
                            std::to_string(n) + ", got " + std::to_string(v.size()));
}

// FNV-1a over raw bytes; used for cache keys and system fingerprints.
inline std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 14695981039346656037ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 14695981039346656037ull) {
  return fnv1a(s.data(), s.size(), h);
}

}  // namespace sclf
