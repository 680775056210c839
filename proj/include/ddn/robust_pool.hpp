#pragma once

// Robust vector pooling:
//
//   y(x) = argmin_u  sum_i phi(||u - x_i||_2; alpha)
//
// over a batch of point sets x of shape b x m x n (m-dimensional features,
// n points). The backward pass evaluates the vector-Jacobian product
// left-to-right: w = H^{-1} v by Cholesky, then
//   dJ/dx_i = kappa1(z_i) w + kappa2(z_i) (w^T (y - x_i)) (y - x_i)
// using only O(nm) storage.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "ddn/detail/parallel.hpp"
#include "ddn/errors.hpp"
#include "ddn/lbfgs.hpp"
#include "ddn/linalg.hpp"
#include "ddn/penalties.hpp"
#include "ddn/workspace.hpp"

namespace ddn {

/// Row-major b x m x n tensor: entry (batch, feature, point).
template <class Real>
class PointSet {
 public:
  PointSet() = default;
  PointSet(std::size_t batch, std::size_t dim, std::size_t points, Real fill = Real(0))
      : batch_(batch), dim_(dim), points_(points), data_(batch * dim * points, fill) {
    if (dim == 0 || points == 0) throw InvalidArgument("PointSet: need dim >= 1 and points >= 1");
  }

  std::size_t batch() const noexcept { return batch_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t points() const noexcept { return points_; }

  Real& operator()(std::size_t b, std::size_t k, std::size_t i) noexcept {
    return data_[(b * dim_ + k) * points_ + i];
  }
  Real operator()(std::size_t b, std::size_t k, std::size_t i) const noexcept {
    return data_[(b * dim_ + k) * points_ + i];
  }

  /// The m x n slice for one batch element.
  MatrixView<Real> slice(std::size_t b) const noexcept {
    return {data_.data() + b * dim_ * points_, dim_, points_, points_};
  }
  std::span<Real> slice_values(std::size_t b) noexcept {
    return {data_.data() + b * dim_ * points_, dim_ * points_};
  }

  std::span<Real> values() noexcept { return {data_.data(), data_.size()}; }
  std::span<const Real> values() const noexcept { return {data_.data(), data_.size()}; }

 private:
  std::size_t batch_ = 0;
  std::size_t dim_ = 0;
  std::size_t points_ = 0;
  tracked_vector<Real> data_;
};

template <class Real>
struct PoolResult {
  /// b x m pooled output.
  Matrix<Real> y;
  std::vector<Real> objective;
  std::vector<std::uint8_t> converged;
  std::vector<std::size_t> iterations;
};

struct PoolOptions {
  /// Stationarity tolerance per point: ||grad f(y)|| <= tol * n.
  double tol = 1e-10;
  std::size_t max_iter = 500;
  std::size_t history = 10;
  bool parallel_batch = false;
};

struct PoolBackwardOptions {
  /// Added to the diagonal of H before factoring.
  double regularization = 0.0;
  /// Skip the kappa2 == 0 shortcut (for testing the general path).
  bool force_general = false;
  bool parallel_batch = false;
};

/// Shift applied to z in the backward pass so kappa(z) stays finite when the
/// output coincides with an input point.
inline constexpr double kBackwardNormShift = 1.0e-9;

namespace detail {

template <class Real>
void check_finite(std::span<const Real> values, const char* what) {
  for (Real v : values)
    if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + ": non-finite entry");
}

/// f(u) and grad f(u) for one point set. `residual` is an m x n scratch
/// buffer that receives u - x_i column-wise.
template <class Real>
Real pool_objective(const PenaltyKind& kind, MatrixView<Real> x, std::span<const Real> u,
                    std::span<Real> grad, Matrix<Real>& residual, std::span<Real> z) {
  const std::size_t m = x.rows, n = x.cols;
  std::fill(z.begin(), z.end(), Real(0));
  for (std::size_t k = 0; k < m; ++k) {
    const Real* xk = x.row(k);
    Real* rk = residual.row(k).data();
    for (std::size_t i = 0; i < n; ++i) {
      rk[i] = u[k] - xk[i];
      z[i] += rk[i] * rk[i];
    }
  }
  Real value = 0;
  for (std::size_t i = 0; i < n; ++i) {
    z[i] = std::sqrt(z[i]);
    value += phi_value<Real>(kind, z[i]);
    z[i] = kappa<Real>(kind, z[i]).kappa1;
  }
  for (std::size_t k = 0; k < m; ++k) {
    const Real* rk = residual.row(k).data();
    Real g = 0;
    for (std::size_t i = 0; i < n; ++i) g += z[i] * rk[i];
    grad[k] = g;
  }
  return value;
}

template <class Real>
tracked_vector<Real> sample_mean(MatrixView<Real> x) {
  tracked_vector<Real> mean(x.rows);
  for (std::size_t k = 0; k < x.rows; ++k) {
    const Real* xk = x.row(k);
    Real sum = 0;
    for (std::size_t i = 0; i < x.cols; ++i) sum += xk[i];
    mean[k] = sum / static_cast<Real>(x.cols);
  }
  return mean;
}

template <class Real>
tracked_vector<Real> coordinate_median(MatrixView<Real> x) {
  tracked_vector<Real> median(x.rows), scratch(x.cols);
  for (std::size_t k = 0; k < x.rows; ++k) {
    std::copy(x.row(k), x.row(k) + x.cols, scratch.begin());
    std::sort(scratch.begin(), scratch.end());
    const std::size_t h = x.cols / 2;
    median[k] = x.cols % 2 ? scratch[h] : Real(0.5) * (scratch[h - 1] + scratch[h]);
  }
  return median;
}

template <class Real>
void check_pool_shapes(const PointSet<Real>& x, const Matrix<Real>& y, const char* what) {
  if (y.rows() != x.batch() || y.cols() != x.dim())
    throw DimensionMismatch(std::string(what) + ": y must be batch x dim");
}

}  // namespace detail

/// Solves the pooling problem for every batch element. Quadratic returns the
/// sample mean; other penalties run L-BFGS from the sample mean, and
/// non-convex penalties additionally from the coordinate-wise median,
/// keeping the lower objective.
template <class Real>
PoolResult<Real> pool_forward(const PointSet<Real>& x, const PenaltyKind& kind,
                              const PoolOptions& options = {}) {
  if (!(options.tol > 0.0)) throw InvalidArgument("pool_forward: tol must be positive");
  detail::check_finite<Real>(x.values(), "pool_forward");
  const std::size_t b = x.batch(), m = x.dim(), n = x.points();

  PoolResult<Real> result;
  result.y = Matrix<Real>(b, m);
  result.objective.assign(b, Real(0));
  result.converged.assign(b, 0);
  result.iterations.assign(b, 0);

  detail::for_each_batch(b, options.parallel_batch, [&](std::size_t bi) {
    const MatrixView<Real> xb = x.slice(bi);
    Matrix<Real> residual(m, n);
    tracked_vector<Real> scratch(n), grad(m);
    auto evaluate = [&](std::span<const Real> u, std::span<Real> g) {
      return detail::pool_objective<Real>(kind, xb, u, g, residual, scratch);
    };
    const Real tol = static_cast<Real>(options.tol) * static_cast<Real>(n);

    auto y = result.y.row(bi);
    if (kind.variant == Penalty::quadratic) {
      const auto mean = detail::sample_mean(xb);
      std::copy(mean.begin(), mean.end(), y.begin());
      result.objective[bi] = evaluate(mean, grad);
      result.converged[bi] = 1;
      return;
    }

    LbfgsOptions lopts;
    lopts.tol = static_cast<double>(tol);
    lopts.max_iter = options.max_iter;
    lopts.history = options.history;

    auto best = lbfgs_minimize<Real>(evaluate, std::span<const Real>(detail::sample_mean(xb)), lopts);
    if (!kind.convex()) {
      auto alt = lbfgs_minimize<Real>(evaluate, std::span<const Real>(detail::coordinate_median(xb)), lopts);
      if (alt.value < best.value) best = std::move(alt);
    }
    std::copy(best.u.begin(), best.u.end(), y.begin());
    result.objective[bi] = best.value;
    result.converged[bi] = best.converged;
    result.iterations[bi] = best.iterations;
  });
  return result;
}

/// dJ/dx for incoming dJ/dy = v (b x m). Returns a b x m x n tensor.
template <class Real>
PointSet<Real> pool_backward(const PointSet<Real>& x, const Matrix<Real>& y, const PenaltyKind& kind,
                             const Matrix<Real>& v, const PoolBackwardOptions& options = {}) {
  detail::check_pool_shapes(x, y, "pool_backward");
  if (v.rows() != y.rows() || v.cols() != y.cols())
    throw DimensionMismatch("pool_backward: v must be batch x dim");
  const std::size_t b = x.batch(), m = x.dim(), n = x.points();
  const Real reg = static_cast<Real>(options.regularization);
  PointSet<Real> grad(b, m, n);

  detail::for_each_batch(b, options.parallel_batch, [&](std::size_t bi) {
    const MatrixView<Real> xb = x.slice(bi);
    const auto yb = y.row(bi);
    const auto vb = v.row(bi);
    auto out = grad.slice_values(bi);

    tracked_vector<Real> k1(n, Real(0)), k2(n);
    for (std::size_t k = 0; k < m; ++k) {
      const Real* xk = xb.row(k);
      for (std::size_t i = 0; i < n; ++i) {
        const Real d = yb[k] - xk[i];
        k1[i] += d * d;
      }
    }
    bool all_k2_zero = true;
    Real k1_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const Real z = std::sqrt(k1[i]) + static_cast<Real>(kBackwardNormShift);
      const auto kp = kappa<Real>(kind, z);
      k1[i] = kp.kappa1;
      k2[i] = kp.kappa2;
      k1_sum += kp.kappa1;
      all_k2_zero = all_k2_zero && kp.kappa2 == Real(0);
    }

    if (all_k2_zero && !options.force_general) {
      const Real denom = k1_sum + reg;
      if (!(denom > Real(0)))
        throw NotPositiveDefinite("pool_backward: Hessian is zero (every point is truncated); "
                                  "add Hessian regularization",
                                  0);
      for (std::size_t k = 0; k < m; ++k) {
        const Real scaled = vb[k] / denom;
        for (std::size_t i = 0; i < n; ++i) out[k * n + i] = k1[i] * scaled;
      }
      return;
    }

    // H = (sum kappa1 + reg) I + sum_i kappa2_i (y - x_i)(y - x_i)^T
    Matrix<Real> hessian(m, m);
    for (std::size_t p = 0; p < m; ++p) {
      const Real* xp = xb.row(p);
      for (std::size_t q = 0; q <= p; ++q) {
        const Real* xq = xb.row(q);
        Real sum = 0;
        for (std::size_t i = 0; i < n; ++i) sum += k2[i] * (yb[p] - xp[i]) * (yb[q] - xq[i]);
        hessian(p, q) = sum;
        hessian(q, p) = sum;
      }
      hessian(p, p) += k1_sum + reg;
    }
    CholeskyFactor<Real> factor = [&] {
      try {
        return cholesky_factorize(std::move(hessian));
      } catch (const NotPositiveDefinite& e) {
        throw NotPositiveDefinite(std::string("pool_backward: Hessian is not positive definite (") +
                                      e.what() + "); add Hessian regularization",
                                  e.pivot());
      }
    }();
    tracked_vector<Real> w(vb.begin(), vb.end());
    factor.solve_in_place(w);

    // k2 <- kappa2_i * w^T (y - x_i)
    tracked_vector<Real> proj(n, Real(0));
    for (std::size_t k = 0; k < m; ++k) {
      const Real* xk = xb.row(k);
      for (std::size_t i = 0; i < n; ++i) proj[i] += w[k] * (yb[k] - xk[i]);
    }
    for (std::size_t i = 0; i < n; ++i) k2[i] *= proj[i];

    for (std::size_t k = 0; k < m; ++k) {
      const Real* xk = xb.row(k);
      for (std::size_t i = 0; i < n; ++i) out[k * n + i] = k1[i] * w[k] + k2[i] * (yb[k] - xk[i]);
    }
  });
  return grad;
}

/// Full Jacobian Dy(x) stored as b x m x m x n: entry (b, p, k, j) is
/// d y_p / d x_{k j}.
template <class Real>
class PoolJacobian {
 public:
  PoolJacobian(std::size_t batch, std::size_t dim, std::size_t points)
      : batch_(batch), dim_(dim), points_(points), data_(batch * dim * dim * points) {}

  std::size_t batch() const noexcept { return batch_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t points() const noexcept { return points_; }

  Real& operator()(std::size_t b, std::size_t p, std::size_t k, std::size_t j) noexcept {
    return data_[((b * dim_ + p) * dim_ + k) * points_ + j];
  }
  Real operator()(std::size_t b, std::size_t p, std::size_t k, std::size_t j) const noexcept {
    return data_[((b * dim_ + p) * dim_ + k) * points_ + j];
  }

 private:
  std::size_t batch_, dim_, points_;
  tracked_vector<Real> data_;
};

/// Explicit Jacobian: Dy/dx_j = H^{-1} (kappa1_j I + kappa2_j d_j d_j^T).
/// Uses O(n m^2) storage; it exists as the baseline the vJp is measured
/// against.
template <class Real>
PoolJacobian<Real> pool_jacobian_naive(const PointSet<Real>& x, const Matrix<Real>& y,
                                       const PenaltyKind& kind, double regularization = 0.0) {
  detail::check_pool_shapes(x, y, "pool_jacobian_naive");
  const std::size_t b = x.batch(), m = x.dim(), n = x.points();
  PoolJacobian<Real> jac(b, m, n);
  for (std::size_t bi = 0; bi < b; ++bi) {
    const MatrixView<Real> xb = x.slice(bi);
    const auto yb = y.row(bi);
    Matrix<Real> diff(m, n);
    tracked_vector<Real> k1(n), k2(n, Real(0));
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t i = 0; i < n; ++i) {
        diff(k, i) = yb[k] - xb(k, i);
        k2[i] += diff(k, i) * diff(k, i);
      }
    Real k1_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto kp = kappa<Real>(kind, std::sqrt(k2[i]) + static_cast<Real>(kBackwardNormShift));
      k1[i] = kp.kappa1;
      k2[i] = kp.kappa2;
      k1_sum += kp.kappa1;
    }
    // Every -B_j, stored in place in the output.
    Matrix<Real> hessian(m, m);
    for (std::size_t p = 0; p < m; ++p) {
      for (std::size_t k = 0; k < m; ++k) {
        for (std::size_t j = 0; j < n; ++j) {
          const Real block = (p == k ? k1[j] : Real(0)) + k2[j] * diff(p, j) * diff(k, j);
          jac(bi, p, k, j) = block;
          hessian(p, k) += k2[j] * diff(p, j) * diff(k, j);
        }
      }
      hessian(p, p) += k1_sum + static_cast<Real>(regularization);
    }
    const auto factor = cholesky_factorize(std::move(hessian));
    tracked_vector<Real> column(m);
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t p = 0; p < m; ++p) column[p] = jac(bi, p, k, j);
        factor.solve_in_place(column);
        for (std::size_t p = 0; p < m; ++p) jac(bi, p, k, j) = column[p];
      }
    }
  }
  return jac;
}

/// v^T Dy(x) from an explicit Jacobian.
template <class Real>
PointSet<Real> contract_jacobian(const PoolJacobian<Real>& jac, const Matrix<Real>& v) {
  const std::size_t b = jac.batch(), m = jac.dim(), n = jac.points();
  if (v.rows() != b || v.cols() != m) throw DimensionMismatch("contract_jacobian: v must be batch x dim");
  PointSet<Real> out(b, m, n);
  for (std::size_t bi = 0; bi < b; ++bi)
    for (std::size_t p = 0; p < m; ++p)
      for (std::size_t k = 0; k < m; ++k)
        for (std::size_t j = 0; j < n; ++j) out(bi, k, j) += v(bi, p) * jac(bi, p, k, j);
  return out;
}

}  // namespace ddn
