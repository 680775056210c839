#pragma once

// Limited-memory BFGS with the two-loop recursion and a backtracking
// (Armijo) line search.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>

#include "ddn/workspace.hpp"

namespace ddn {

struct LbfgsOptions {
  /// Stop when ||gradient||_2 <= tol.
  double tol = 1e-10;
  std::size_t max_iter = 500;
  /// Number of correction pairs kept.
  std::size_t history = 10;
  /// Sufficient decrease constant.
  double armijo = 1e-4;
  std::size_t max_backtracks = 60;
};

template <class Real>
struct LbfgsResult {
  tracked_vector<Real> u;
  Real value = 0;
  Real gradient_norm = 0;
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

template <class Real>
Real dot(std::span<const Real> a, std::span<const Real> b) {
  Real sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
  return sum;
}

template <class Real>
Real norm2(std::span<const Real> a) {
  return std::sqrt(dot(a, a));
}

}  // namespace detail

/// Minimizes a smooth function given `value_and_gradient(u, grad) -> value`,
/// which must write the gradient at `u` into `grad`.
///
/// Near the solution the objective stalls at round-off long before the
/// gradient does, so a trial step is also accepted when the value did not
/// increase beyond a few ulps and the gradient norm decreased. When the
/// quasi-Newton direction cannot be made to decrease the objective, a plain
/// gradient step with step halving is tried before giving up.
template <class Real, class F>
LbfgsResult<Real> lbfgs_minimize(F&& value_and_gradient, std::span<const Real> u0,
                                 const LbfgsOptions& options = {}) {
  const std::size_t dim = u0.size();
  const std::size_t hist = std::max<std::size_t>(options.history, 1);

  LbfgsResult<Real> result;
  result.u.assign(u0.begin(), u0.end());
  tracked_vector<Real> grad(dim), trial(dim), trial_grad(dim), direction(dim);
  tracked_vector<Real> s_hist(hist * dim), y_hist(hist * dim), rho(hist), alpha(hist);
  std::size_t stored = 0, head = 0;

  auto s_at = [&](std::size_t k) { return std::span<Real>(s_hist.data() + k * dim, dim); };
  auto y_at = [&](std::size_t k) { return std::span<Real>(y_hist.data() + k * dim, dim); };

  Real value = value_and_gradient(std::span<const Real>(result.u), std::span<Real>(grad));
  Real gnorm = detail::norm2<Real>(grad);

  const Real eps = std::numeric_limits<Real>::epsilon();

  auto try_step = [&](std::span<const Real> dir, Real step, Real slope) {
    for (std::size_t b = 0; b < options.max_backtracks; ++b) {
      for (std::size_t i = 0; i < dim; ++i) trial[i] = result.u[i] + step * dir[i];
      const Real tv = value_and_gradient(std::span<const Real>(trial), std::span<Real>(trial_grad));
      if (std::isfinite(tv)) {
        const bool armijo = tv <= value + static_cast<Real>(options.armijo) * step * slope;
        const bool flat = tv <= value + Real(8) * eps * std::abs(value) &&
                          detail::norm2<Real>(trial_grad) < gnorm;
        if (armijo || flat) return std::pair<bool, Real>{true, tv};
      }
      step *= Real(0.5);
    }
    return std::pair<bool, Real>{false, value};
  };

  std::size_t iter = 0;
  for (; iter < options.max_iter && !(gnorm <= static_cast<Real>(options.tol)); ++iter) {
    // Two-loop recursion: direction = -H_k grad.
    for (std::size_t i = 0; i < dim; ++i) direction[i] = -grad[i];
    for (std::size_t k = 0; k < stored; ++k) {
      const std::size_t idx = (head + hist - 1 - k) % hist;
      alpha[idx] = rho[idx] * detail::dot<Real>(s_at(idx), direction);
      auto y = y_at(idx);
      for (std::size_t i = 0; i < dim; ++i) direction[i] -= alpha[idx] * y[i];
    }
    if (stored > 0) {
      const std::size_t last = (head + hist - 1) % hist;
      const Real scale = detail::dot<Real>(s_at(last), y_at(last)) /
                         detail::dot<Real>(y_at(last), y_at(last));
      for (auto& d : direction) d *= scale;
    }
    for (std::size_t k = stored; k-- > 0;) {
      const std::size_t idx = (head + hist - 1 - k) % hist;
      const Real beta = rho[idx] * detail::dot<Real>(y_at(idx), direction);
      auto s = s_at(idx);
      for (std::size_t i = 0; i < dim; ++i) direction[i] += (alpha[idx] - beta) * s[i];
    }

    Real slope = detail::dot<Real>(grad, direction);
    std::pair<bool, Real> accepted{false, value};
    if (slope < Real(0)) accepted = try_step(direction, Real(1), slope);
    if (!accepted.first) {
      // Fall back to steepest descent and drop the curvature history.
      stored = 0;
      head = 0;
      for (std::size_t i = 0; i < dim; ++i) direction[i] = -grad[i];
      slope = -gnorm * gnorm;
      accepted = try_step(direction, Real(1) / std::max(gnorm, Real(1)), slope);
      if (!accepted.first) break;
    }

    // Curvature pair; skipped when s^T y is not safely positive.
    auto s = s_at(head);
    auto y = y_at(head);
    for (std::size_t i = 0; i < dim; ++i) {
      s[i] = trial[i] - result.u[i];
      y[i] = trial_grad[i] - grad[i];
    }
    const Real sy = detail::dot<Real>(s, y);
    if (sy > eps * detail::norm2<Real>(s) * detail::norm2<Real>(y)) {
      rho[head] = Real(1) / sy;
      head = (head + 1) % hist;
      stored = std::min(stored + 1, hist);
    }

    std::swap(result.u, trial);
    std::swap(grad, trial_grad);
    value = accepted.second;
    gnorm = detail::norm2<Real>(grad);
  }

  result.value = value;
  result.gradient_norm = gnorm;
  result.iterations = iter;
  result.converged = gnorm <= static_cast<Real>(options.tol);
  return result;
}

}  // namespace ddn
