#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "latentcl/numcore/errors.hpp"
#include "latentcl/numcore/rng.hpp"

// Angle-based construction of structured negatives around a hint feature.

namespace latentcl::geometry {

using Vec = std::vector<double>;

class DegenerateTrajectoryError : public DegenerateInputError {
 public:
  using DegenerateInputError::DegenerateInputError;
};

// Thrown when epsilon is (numerically) parallel to delta; draw a new epsilon.
class ResampleRequired : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ResampleExhaustedError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kMinNorm = 1e-9;
inline constexpr int kMaxResamples = 16;

inline double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) {
    throw DimensionError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}
inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

inline Vec axpy(double alpha, const Vec& x, const Vec& y) {  // alpha*x + y
  Vec out(y);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += alpha * x[i];
  return out;
}

struct PerturbationSample {
  Vec delta;     // S_hint - S_I
  Vec eta_norm;  // unit vector orthogonal to delta
  double theta = 0.0;
  Vec z;      // delta rotated by theta toward eta_norm, |z| = |delta|
  Vec s_neg;  // S_I + delta + z
};

inline Vec trajectory_delta(const Vec& s_i, const Vec& s_hint) {
  if (s_i.size() != s_hint.size()) throw DimensionError("trajectory_delta: feature length mismatch");
  Vec out(s_hint.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = s_hint[i] - s_i[i];
  return out;
}

/// Gram-Schmidt step: eta = eps - (eps.delta / |delta|^2) delta.
inline Vec orthogonalize(const Vec& epsilon, const Vec& delta) {
  const double dd = dot(delta, delta);
  if (std::sqrt(dd) <= kMinNorm) throw DegenerateTrajectoryError("orthogonalize: zero trajectory vector");
  Vec eta = axpy(-dot(epsilon, delta) / dd, delta, epsilon);
  if (norm(eta) < kMinNorm) throw ResampleRequired("orthogonalize: epsilon parallel to trajectory");
  return eta;
}

/// z = (cos(theta) delta/|delta| + sin(theta) eta_norm) |delta|.
inline Vec rotate_deviation(const Vec& delta, const Vec& eta_norm, double theta) {
  const double dn = norm(delta);
  if (dn <= kMinNorm) throw ContractError("rotate_deviation: zero trajectory vector");
  if (std::abs(norm(eta_norm) - 1.0) > 1e-9) throw ContractError("rotate_deviation: eta_norm is not unit length");
  if (std::abs(dot(eta_norm, delta)) > 1e-9 * dn) throw ContractError("rotate_deviation: eta_norm not orthogonal to delta");
  const double c = std::cos(theta), s = std::sin(theta);
  Vec z(delta.size());
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = (c * delta[i] / dn + s * eta_norm[i]) * dn;
  return z;
}

struct AngleRange {
  double lo = std::numbers::pi / 2.0;
  double hi = std::numbers::pi;
};

/// One structured negative: theta ~ U[lo, hi], epsilon ~ N(0, I).
inline PerturbationSample make_negative(const Vec& s_i, const Vec& s_hint, Rng& rng, AngleRange range = {}) {
  if (!(range.lo >= 0.0 && range.lo <= range.hi && range.hi <= std::numbers::pi)) {
    throw ParameterError("make_negative: angle range must satisfy 0 <= lo <= hi <= pi");
  }
  PerturbationSample s;
  s.delta = trajectory_delta(s_i, s_hint);
  if (norm(s.delta) <= kMinNorm) throw DegenerateTrajectoryError("make_negative: hint feature equals original feature");
  Vec eta;
  for (int attempt = 0;; ++attempt) {
    if (attempt >= kMaxResamples) throw ResampleExhaustedError("make_negative: epsilon parallel to trajectory 16 times");
    try {
      eta = orthogonalize(rng.normal_vector(s.delta.size()), s.delta);
      break;
    } catch (const ResampleRequired&) {
    }
  }
  const double en = norm(eta);
  s.eta_norm.resize(eta.size());
  for (std::size_t i = 0; i < eta.size(); ++i) s.eta_norm[i] = eta[i] / en;
  // One Gram-Schmidt pass leaves ~1e-16 relative residue; a second pass keeps
  // eta_norm within the rotate_deviation orthogonality contract.
  const double resid = dot(s.eta_norm, s.delta) / dot(s.delta, s.delta);
  s.eta_norm = axpy(-resid, s.delta, s.eta_norm);
  const double en2 = norm(s.eta_norm);
  for (double& x : s.eta_norm) x /= en2;

  s.theta = rng.uniform(range.lo, range.hi);
  s.z = rotate_deviation(s.delta, s.eta_norm, s.theta);
  s.s_neg.resize(s_i.size());
  for (std::size_t i = 0; i < s_i.size(); ++i) s.s_neg[i] = s_i[i] + s.delta[i] + s.z[i];
  return s;
}

/// Ablation negative: S_hint + scale * epsilon.
inline Vec gaussian_negative(const Vec& s_hint, Rng& rng, double scale) {
  if (scale < 0.0) throw ParameterError("gaussian_negative: scale must be non-negative");
  Vec eps = rng.normal_vector(s_hint.size());
  return axpy(scale, eps, s_hint);
}

}  // namespace latentcl::geometry
