#pragma once

// Robust penalty functions phi(z; alpha) for z >= 0 and their Hessian
// coefficients
//
//   kappa1(z) = phi'(z) / z
//   kappa2(z) = (phi''(z) - kappa1(z)) / z^2
//
// so that the Hessian of phi(||u - x||) w.r.t. u is
// kappa1 I + kappa2 (u - x)(u - x)^T. At z = 0 the analytic limits are
// returned.

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <string>
#include <string_view>

#include "ddn/errors.hpp"

namespace ddn {

enum class Penalty { quadratic, pseudo_huber, huber, welsch, truncated_quadratic };

inline constexpr std::array<Penalty, 5> kAllPenalties = {
    Penalty::quadratic, Penalty::pseudo_huber, Penalty::huber, Penalty::welsch,
    Penalty::truncated_quadratic};

struct PenaltyKind {
  Penalty variant = Penalty::quadratic;
  double alpha = 1.0;

  PenaltyKind() = default;
  PenaltyKind(Penalty v, double a = 1.0) : variant(v), alpha(a) {
    if (!(a > 0.0) || !std::isfinite(a)) throw InvalidArgument("penalty alpha must be positive and finite");
  }

  /// True when kappa2 vanishes identically, enabling the diagonal-Hessian
  /// backward path.
  bool kappa2_identically_zero() const noexcept {
    return variant == Penalty::quadratic || variant == Penalty::truncated_quadratic;
  }

  /// Non-convex penalties get a second initialization in the forward pass.
  bool convex() const noexcept {
    return variant != Penalty::welsch && variant != Penalty::truncated_quadratic;
  }

  /// Location of the kink (if any) in phi''.
  bool has_branch_point() const noexcept {
    return variant == Penalty::huber || variant == Penalty::truncated_quadratic;
  }
};

template <class Real>
struct KappaPair {
  Real kappa1;
  Real kappa2;
};

constexpr std::string_view penalty_name(Penalty p) noexcept {
  switch (p) {
    case Penalty::quadratic: return "quadratic";
    case Penalty::pseudo_huber: return "pseudo-huber";
    case Penalty::huber: return "huber";
    case Penalty::welsch: return "welsch";
    case Penalty::truncated_quadratic: return "trunc-quad";
  }
  return "unknown";
}

/// Case-insensitive lookup of the CLI penalty names.
inline Penalty parse_penalty(std::string_view name) {
  std::string lowered(name);
  std::transform(lowered.begin(), lowered.end(), lowered.begin(),
                 [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  for (Penalty p : kAllPenalties)
    if (penalty_name(p) == lowered) return p;
  throw InvalidArgument("unknown penalty '" + std::string(name) +
                        "' (expected quadratic, pseudo-huber, huber, welsch or trunc-quad)");
}

template <class Real>
Real phi_value(const PenaltyKind& kind, Real z) {
  const Real a = static_cast<Real>(kind.alpha);
  switch (kind.variant) {
    case Penalty::quadratic:
      return Real(0.5) * z * z;
    case Penalty::pseudo_huber: {
      const Real s = z / a;
      // a^2 (sqrt(1 + s^2) - 1) rewritten to avoid cancellation for small s.
      return a * a * s * s / (std::sqrt(Real(1) + s * s) + Real(1));
    }
    case Penalty::huber:
      return z <= a ? Real(0.5) * z * z : a * (z - Real(0.5) * a);
    case Penalty::welsch:
      return -std::expm1(-z * z / (Real(2) * a * a));
    case Penalty::truncated_quadratic:
      return z <= a ? Real(0.5) * z * z : Real(0.5) * a * a;
  }
  return Real(0);
}

template <class Real>
KappaPair<Real> kappa(const PenaltyKind& kind, Real z) {
  const Real a = static_cast<Real>(kind.alpha);
  switch (kind.variant) {
    case Penalty::quadratic:
      return {Real(1), Real(0)};
    case Penalty::pseudo_huber: {
      const Real t = Real(1) + (z / a) * (z / a);
      const Real k1 = Real(1) / std::sqrt(t);
      return {k1, -k1 / (t * a * a)};
    }
    case Penalty::huber:
      if (z <= a) return {Real(1), Real(0)};
      return {a / z, -a / (z * z * z)};
    case Penalty::welsch: {
      const Real e = std::exp(-z * z / (Real(2) * a * a));
      const Real a2 = a * a;
      return {e / a2, -e / (a2 * a2)};
    }
    case Penalty::truncated_quadratic:
      return {z <= a ? Real(1) : Real(0), Real(0)};
  }
  return {Real(0), Real(0)};
}

}  // namespace ddn
