#pragma once

// Closed-form threshold calibration for the CUSUM-style statistic:
//   h = -log(beta) / omega0
//   omega0 = v_m - theta - W(-phi * theta * exp(-phi * theta)) / phi
//   theta  = v_m * exp(-v_m * D_alpha^m)
// with the false alarm rate bounded by exp(-omega0 * h).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "seqvad/error.hpp"

namespace seqvad {

enum class LambertBranch { principal, minus_one };

/// Solves w * exp(w) = x on the requested real branch with Halley's method.
/// Domains: principal x >= -1/e; minus_one -1/e <= x < 0.
template <std::floating_point T>
T lambert_w(LambertBranch branch, T x) {
  constexpr T inv_e = T(1) / std::numbers::e_v<T>;
  // A few ulps of slack so -exp(-1) computed in T is accepted as the branch point.
  constexpr T slack = 8 * std::numeric_limits<T>::epsilon();
  if (!std::isfinite(x) || x < -inv_e - slack) {
    fail(ErrorKind::numeric, "lambert_w argument below -1/e");
  }
  if (branch == LambertBranch::minus_one && x >= T(0)) {
    fail(ErrorKind::numeric, "lambert_w minus-one branch requires x < 0");
  }
  if (branch == LambertBranch::principal && x == T(0)) return T(0);

  // Distance from the branch point, p = sqrt(2 (1 + e x)).
  const T p = std::sqrt(std::max(T(2) * (T(1) + std::numbers::e_v<T> * x), T(0)));
  if (p == T(0)) return T(-1);

  T w;
  if (branch == LambertBranch::principal) {
    if (x < T(-0.25)) {
      w = T(-1) + p - p * p / T(3) + T(11) / T(72) * p * p * p;
    } else if (x < T(3)) {
      w = std::log1p(x) * (T(1) - std::log1p(std::log1p(x)) / (T(2) + std::log1p(x)));
    } else {
      const T l1 = std::log(x);
      const T l2 = std::log(l1);
      w = l1 - l2 + l2 / l1;
    }
  } else {
    if (x < T(-0.25)) {
      w = T(-1) - p - p * p / T(3) - T(11) / T(72) * p * p * p;
    } else {
      const T l1 = std::log(-x);
      const T l2 = std::log(-l1);
      w = l1 - l2 + l2 / l1;
    }
  }

  for (int iter = 0; iter < 100; ++iter) {
    const T ew = std::exp(w);
    const T f = w * ew - x;
    if (f == T(0)) break;
    const T wp1 = w + T(1);
    if (wp1 == T(0)) break;
    const T step = f / (ew * wp1 - (w + T(2)) * f / (T(2) * wp1));
    const T next = w - step;
    if (!std::isfinite(next)) break;
    const bool done = std::abs(step) <= T(4) * std::numeric_limits<T>::epsilon() * (T(1) + std::abs(next));
    w = next;
    if (done) break;
  }
  return w;
}

namespace detail {

/// Gamma(n / 2) for a positive integer n via the integer and half-integer
/// closed forms: (n/2 - 1)! or (n - 2)!! * sqrt(pi) / 2^((n - 1) / 2).
inline double gamma_half(int n) {
  if (n % 2 == 0) {
    double g = 1.0;
    for (int i = 2; i < n / 2; ++i) g *= i;
    return g;
  }
  double g = std::sqrt(std::numbers::pi);
  for (int i = 1; i <= (n - 1) / 2; ++i) g *= (2.0 * i - 1.0) / 2.0;
  return g;
}

}  // namespace detail

/// Volume of the unit ball in m dimensions, pi^(m/2) / Gamma(m/2 + 1).
inline double compute_v_m(int m) {
  if (m < 1) fail(ErrorKind::validation, "dimensionality m must be at least 1, got " + std::to_string(m));
  return std::pow(std::numbers::pi, 0.5 * m) / detail::gamma_half(m + 2);
}

/// Nearest-rank (1 - alpha) percentile: the ceil((1 - alpha) N)-th smallest
/// value. alpha = 0 gives the maximum.
inline double compute_d_alpha(std::span<const double> distances, double alpha) {
  if (distances.empty()) fail(ErrorKind::insufficient_data, "percentile of an empty list");
  if (!(alpha >= 0.0 && alpha < 1.0)) fail(ErrorKind::validation, "alpha must lie in [0, 1)");
  const auto n = distances.size();
  // Guard against (1 - alpha) * n landing a hair above an integer.
  const double scaled = (1.0 - alpha) * static_cast<double>(n);
  auto rank = static_cast<std::size_t>(std::ceil(scaled - 1e-9 * std::max(1.0, scaled)));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::vector<double> sorted(distances.begin(), distances.end());
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank - 1), sorted.end());
  return sorted[rank - 1];
}

/// Evidence raised to the model dimensionality; shared by every path that
/// forms the drift term so the results agree bit for bit.
inline double evidence_power(double evidence, int m) noexcept { return std::pow(evidence, m); }

/// Upper bound for the drift: safety * max(D^m - D_alpha^m) over training
/// evidences.
inline double estimate_phi(std::span<const double> evidences, double d_alpha, int m, double safety = 1.0) {
  if (evidences.empty()) fail(ErrorKind::insufficient_data, "phi needs at least one evidence value");
  if (!(safety > 0.0)) fail(ErrorKind::validation, "phi safety factor must be positive");
  const double base = evidence_power(d_alpha, m);
  double best = -std::numeric_limits<double>::infinity();
  for (double e : evidences) best = std::max(best, evidence_power(e, m) - base);
  const double phi = best * safety;
  if (!(phi > 0.0) || !std::isfinite(phi)) {
    fail(ErrorKind::insufficient_data, "degenerate training set: no evidence exceeds D_alpha");
  }
  return phi;
}

struct Omega0Solution {
  double theta = 0.0;
  double omega0 = 0.0;
  double lambert_value = 0.0;  // the non-degenerate W
  LambertBranch branch = LambertBranch::principal;
};

/// omega0 from the Lambert-W expression. The argument -x e^{-x}, x = phi
/// theta, has the root W = -x on one branch; that root collapses omega0 to
/// v_m, so the other branch is used (principal when x > 1, minus-one when
/// x < 1).
inline Omega0Solution compute_omega0(double v_m, double d_alpha, int m, double phi) {
  if (!(phi > 0.0) || !std::isfinite(phi)) fail(ErrorKind::numeric, "phi must be positive and finite");
  if (!(v_m > 0.0) || !(d_alpha >= 0.0)) fail(ErrorKind::numeric, "invalid v_m or D_alpha");
  Omega0Solution s;
  s.theta = v_m * std::exp(-v_m * evidence_power(d_alpha, m));
  const double x = phi * s.theta;
  if (!(x > 0.0)) fail(ErrorKind::numeric, "phi * theta underflowed to zero");
  if (std::abs(x - 1.0) < 1e-9) fail(ErrorKind::numeric, "degenerate Lambert-W roots (phi * theta == 1)");
  s.branch = x > 1.0 ? LambertBranch::principal : LambertBranch::minus_one;
  s.lambert_value = lambert_w(s.branch, -x * std::exp(-x));
  s.omega0 = v_m - s.theta - s.lambert_value / phi;
  if (!(s.omega0 > 0.0) || !std::isfinite(s.omega0)) {
    fail(ErrorKind::numeric, "omega0 is not positive and finite");
  }
  return s;
}

/// h = -log(beta) / omega0.
inline double compute_threshold(double omega0, double beta) {
  if (!(omega0 > 0.0)) fail(ErrorKind::numeric, "omega0 must be positive");
  if (!(beta > 0.0 && beta <= 1.0)) fail(ErrorKind::validation, "beta must lie in (0, 1]");
  const double h = -std::log(beta) / omega0;
  return h == 0.0 ? 0.0 : h;  // no signed zero at beta = 1
}

inline double far_bound(double omega0, double h) { return std::exp(-omega0 * h); }

struct CalibrationResult {
  double alpha = 0.05;
  double beta = 0.05;
  int m = 0;
  double d_alpha = 0.0;
  double d_max = 0.0;
  double phi = 0.0;
  double phi_safety = 1.0;
  double v_m = 0.0;
  double theta = 0.0;
  double omega0 = 0.0;
  double h = 0.0;

  double bound() const { return far_bound(omega0, h); }
  bool operator==(const CalibrationResult&) const = default;
};

/// Every threshold quantity from per-frame nominal evidences.
inline CalibrationResult derive_calibration(std::span<const double> evidences, double alpha, double beta, int m,
                                            double phi_safety = 1.0) {
  CalibrationResult c;
  c.alpha = alpha;
  c.beta = beta;
  c.m = m;
  c.phi_safety = phi_safety;
  c.d_alpha = compute_d_alpha(evidences, alpha);
  c.d_max = *std::max_element(evidences.begin(), evidences.end());
  c.phi = estimate_phi(evidences, c.d_alpha, m, phi_safety);
  c.v_m = compute_v_m(m);
  const auto omega = compute_omega0(c.v_m, c.d_alpha, m, c.phi);
  c.theta = omega.theta;
  c.omega0 = omega.omega0;
  c.h = compute_threshold(c.omega0, beta);
  return c;
}

}  // namespace seqvad
