#pragma once

// Entropy-regularized optimal transport node:
//
//   P(M, r, c) = argmin_P <P, M> + (1/gamma) KL(P || r c^T)
//                s.t. P 1 = r,  P^T 1 = c
//
// Larger gamma means weaker regularization and sharper plans. The forward
// pass is Sinkhorn's alternating row/column scaling (linear or log domain).
// The implicit backward pass drops the first row constraint so that the
// constraint Jacobian A has full rank, and solves against
//
//   A H^{-1} A^T = gamma [ diag(r_{2:m})  P_{2:m,:} ; P_{2:m,:}^T  diag(c) ]
//
// either through the Schur complement of the larger diagonal block or
// through one dense Cholesky factorization of the whole matrix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ddn/detail/parallel.hpp"
#include "ddn/errors.hpp"
#include "ddn/linalg.hpp"
#include "ddn/workspace.hpp"

namespace ddn {

template <class Real>
struct TransportProblem {
  std::size_t batch = 0;
  std::size_t m = 0;
  std::size_t n = 0;
  /// b x m x n costs.
  tracked_vector<Real> M;
  /// b x m row marginals.
  tracked_vector<Real> r;
  /// b x n column marginals.
  tracked_vector<Real> c;
  Real gamma = Real(1);

  TransportProblem() = default;
  TransportProblem(std::size_t b, std::size_t rows, std::size_t cols, Real g)
      : batch(b), m(rows), n(cols), M(b * rows * cols), r(b * rows), c(b * cols), gamma(g) {}

  MatrixView<Real> cost(std::size_t bi) const noexcept { return {M.data() + bi * m * n, m, n, n}; }
  std::span<const Real> row_marginal(std::size_t bi) const noexcept { return {r.data() + bi * m, m}; }
  std::span<const Real> col_marginal(std::size_t bi) const noexcept { return {c.data() + bi * n, n}; }

  /// Checks shapes, positivity, finiteness and 1^T r = 1^T c = 1. The sum
  /// tolerance is widened to the rounding of a length-k sum in Real.
  void validate(double sum_tol = 1e-12) const {
    if (m < 1 || n < 1) throw InvalidArgument("TransportProblem: m and n must be positive");
    if (M.size() != batch * m * n || r.size() != batch * m || c.size() != batch * n)
      throw DimensionMismatch("TransportProblem: buffer sizes do not match batch x m x n");
    if (!(gamma > Real(0)) || !std::isfinite(gamma)) throw InvalidArgument("TransportProblem: gamma must be positive");
    for (Real v : M)
      if (!std::isfinite(v)) throw InvalidArgument("TransportProblem: non-finite cost");
    for (std::size_t bi = 0; bi < batch; ++bi) {
      for (auto marg : {row_marginal(bi), col_marginal(bi)}) {
        Real sum = 0;
        for (Real v : marg) {
          if (!(v > Real(0)) || !std::isfinite(v))
            throw InvalidArgument("TransportProblem: marginals must be strictly positive");
          sum += v;
        }
        const double tol = std::max(sum_tol, 4.0 * static_cast<double>(marg.size()) *
                                                 static_cast<double>(std::numeric_limits<Real>::epsilon()));
        if (std::abs(static_cast<double>(sum) - 1.0) > tol)
          throw InvalidArgument("TransportProblem: marginals must sum to one");
      }
    }
  }
};

template <class Real>
struct TransportPlan {
  std::size_t batch = 0;
  std::size_t m = 0;
  std::size_t n = 0;
  /// b x m x n coupling.
  tracked_vector<Real> P;
  /// Cached row and column sums of P.
  tracked_vector<Real> row_sums;
  tracked_vector<Real> col_sums;
  /// Max marginal violation per batch element.
  std::vector<Real> residual;
  std::vector<std::size_t> iterations;
  std::vector<std::uint8_t> converged;
  std::vector<std::uint8_t> used_log_domain;

  TransportPlan() = default;
  TransportPlan(std::size_t b, std::size_t rows, std::size_t cols)
      : batch(b), m(rows), n(cols), P(b * rows * cols), row_sums(b * rows), col_sums(b * cols),
        residual(b), iterations(b), converged(b), used_log_domain(b) {}

  MatrixView<Real> plan(std::size_t bi) const noexcept { return {P.data() + bi * m * n, m, n, n}; }
  std::span<Real> plan_values(std::size_t bi) noexcept { return {P.data() + bi * m * n, m * n}; }
};

template <class Real>
struct OtGradients {
  tracked_vector<Real> dJdM;
  tracked_vector<Real> dJdr;
  tracked_vector<Real> dJdc;
};

struct SinkhornOptions {
  /// Stop when max(|P1 - r|, |P^T 1 - c|) <= tol.
  double tol = 1e-9;
  std::size_t max_iter = 10000;
  /// Always use log-sum-exp updates.
  bool log_domain = false;
  /// On linear-domain underflow, redo the element in the log domain instead
  /// of throwing NumericalUnderflow.
  bool auto_log_domain = true;
  /// Run exactly max_iter iterations, ignoring tol.
  bool fixed_iterations = false;
  bool parallel_batch = false;
};

enum class OtBackwardMethod { structured_block, structured_full, unrolled };

namespace detail {

/// Linear-domain Sinkhorn on a precomputed kernel K = (r c^T) .* exp(-gamma M).
/// `u`, `v` hold the scalings; `kv` holds K v for the current v.
template <class Real>
struct LinearSinkhorn {
  MatrixView<Real> kernel;
  std::span<const Real> r, c;

  void matvec(std::span<const Real> v, std::span<Real> out) const {
    for (std::size_t i = 0; i < kernel.rows; ++i) {
      const Real* ki = kernel.row(i);
      Real sum = 0;
      for (std::size_t j = 0; j < kernel.cols; ++j) sum += ki[j] * v[j];
      out[i] = sum;
    }
  }

  void matvec_transposed(std::span<const Real> u, std::span<Real> out) const {
    std::fill(out.begin(), out.end(), Real(0));
    for (std::size_t i = 0; i < kernel.rows; ++i) {
      const Real* ki = kernel.row(i);
      const Real ui = u[i];
      for (std::size_t j = 0; j < kernel.cols; ++j) out[j] += ki[j] * ui;
    }
  }

  /// One full iteration: u <- r / (K v), v <- c / (K^T u), then kv <- K v.
  /// Returns false when a scaling is no longer a positive finite number.
  bool step(std::span<Real> u, std::span<Real> v, std::span<Real> kv, std::span<Real> ktu) const {
    bool ok = true;
    for (std::size_t i = 0; i < u.size(); ++i) {
      u[i] = r[i] / kv[i];
      ok = ok && std::isfinite(u[i]) && u[i] > Real(0);
    }
    matvec_transposed(u, ktu);
    for (std::size_t j = 0; j < v.size(); ++j) {
      v[j] = c[j] / ktu[j];
      ok = ok && std::isfinite(v[j]) && v[j] > Real(0);
    }
    matvec(v, kv);
    return ok;
  }
};

template <class Real>
bool build_kernel(MatrixView<Real> cost, std::span<const Real> r, std::span<const Real> c, Real gamma,
                  Matrix<Real>& kernel) {
  bool ok = true;
  for (std::size_t i = 0; i < cost.rows; ++i) {
    const Real* mi = cost.row(i);
    Real* ki = kernel.row(i).data();
    for (std::size_t j = 0; j < cost.cols; ++j) {
      ki[j] = r[i] * c[j] * std::exp(-gamma * mi[j]);
      ok = ok && ki[j] >= std::numeric_limits<Real>::min();
    }
  }
  return ok;
}

template <class Real>
void finish_plan(TransportPlan<Real>& plan, std::size_t bi, std::span<const Real> r, std::span<const Real> c) {
  const std::size_t m = plan.m, n = plan.n;
  auto P = plan.plan_values(bi);
  std::span<Real> rows(plan.row_sums.data() + bi * m, m), cols(plan.col_sums.data() + bi * n, n);
  std::fill(cols.begin(), cols.end(), Real(0));
  Real residual = 0;
  for (std::size_t i = 0; i < m; ++i) {
    Real sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      sum += P[i * n + j];
      cols[j] += P[i * n + j];
    }
    rows[i] = sum;
    residual = std::max(residual, std::abs(sum - r[i]));
  }
  for (std::size_t j = 0; j < n; ++j) residual = std::max(residual, std::abs(cols[j] - c[j]));
  plan.residual[bi] = residual;
}

template <class Real>
bool sinkhorn_linear(const TransportProblem<Real>& prob, std::size_t bi, const SinkhornOptions& options,
                     TransportPlan<Real>& plan) {
  const std::size_t m = prob.m, n = prob.n;
  const auto r = prob.row_marginal(bi);
  const auto c = prob.col_marginal(bi);
  Matrix<Real> kernel(m, n);
  if (!build_kernel(prob.cost(bi), r, c, prob.gamma, kernel)) return false;
  const LinearSinkhorn<Real> solver{view(kernel), r, c};

  tracked_vector<Real> u(m), v(n, Real(1)), kv(m), ktu(n);
  solver.matvec(v, kv);
  const Real tol = static_cast<Real>(options.tol);
  std::size_t it = 0;
  while (it < options.max_iter) {
    if (!solver.step(u, v, kv, ktu)) return false;
    ++it;
    if (options.fixed_iterations) continue;
    Real residual = 0;
    for (std::size_t i = 0; i < m; ++i) residual = std::max(residual, std::abs(u[i] * kv[i] - r[i]));
    if (residual <= tol) break;
  }
  auto P = plan.plan_values(bi);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) P[i * n + j] = u[i] * kernel(i, j) * v[j];
  plan.iterations[bi] = it;
  return true;
}

template <class Real>
Real log_sum_exp(const Real* values, std::size_t count, std::size_t stride) {
  Real top = -std::numeric_limits<Real>::infinity();
  for (std::size_t k = 0; k < count; ++k) top = std::max(top, values[k * stride]);
  Real sum = 0;
  for (std::size_t k = 0; k < count; ++k) sum += std::exp(values[k * stride] - top);
  return top + std::log(sum);
}

template <class Real>
void sinkhorn_log(const TransportProblem<Real>& prob, std::size_t bi, const SinkhornOptions& options,
                  TransportPlan<Real>& plan) {
  const std::size_t m = prob.m, n = prob.n;
  const auto r = prob.row_marginal(bi);
  const auto c = prob.col_marginal(bi);
  const auto cost = prob.cost(bi);
  Matrix<Real> log_kernel(m, n), shifted(m, n);
  tracked_vector<Real> log_r(m), log_c(n), f(m), g(n, Real(0)), row_lse(m);
  for (std::size_t i = 0; i < m; ++i) log_r[i] = std::log(r[i]);
  for (std::size_t j = 0; j < n; ++j) log_c[j] = std::log(c[j]);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) log_kernel(i, j) = log_r[i] + log_c[j] - prob.gamma * cost(i, j);

  auto update_row_lse = [&] {
    for (std::size_t i = 0; i < m; ++i) {
      auto si = shifted.row(i);
      for (std::size_t j = 0; j < n; ++j) si[j] = log_kernel(i, j) + g[j];
      row_lse[i] = log_sum_exp(si.data(), n, 1);
    }
  };
  update_row_lse();
  const Real tol = static_cast<Real>(options.tol);
  std::size_t it = 0;
  while (it < options.max_iter) {
    for (std::size_t i = 0; i < m; ++i) f[i] = log_r[i] - row_lse[i];
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) shifted(i, j) = log_kernel(i, j) + f[i];
    for (std::size_t j = 0; j < n; ++j)
      g[j] = log_c[j] - log_sum_exp(shifted.values().data() + j, m, n);
    update_row_lse();
    ++it;
    if (options.fixed_iterations) continue;
    Real residual = 0;
    for (std::size_t i = 0; i < m; ++i) residual = std::max(residual, std::abs(std::exp(f[i] + row_lse[i]) - r[i]));
    if (residual <= tol) break;
  }
  auto P = plan.plan_values(bi);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) P[i * n + j] = std::exp(f[i] + log_kernel(i, j) + g[j]);
  plan.iterations[bi] = it;
}

}  // namespace detail

/// Sinkhorn forward pass for every batch element.
template <class Real>
TransportPlan<Real> ot_forward(const TransportProblem<Real>& prob, const SinkhornOptions& options = {}) {
  prob.validate();
  if (!(options.tol >= 0.0)) throw InvalidArgument("ot_forward: tol must be non-negative");
  if (options.max_iter == 0) throw InvalidArgument("ot_forward: max_iter must be positive");
  TransportPlan<Real> plan(prob.batch, prob.m, prob.n);
  detail::for_each_batch(prob.batch, options.parallel_batch, [&](std::size_t bi) {
    bool log_domain = options.log_domain;
    if (!log_domain && !detail::sinkhorn_linear(prob, bi, options, plan)) {
      if (!options.auto_log_domain)
        throw NumericalUnderflow("ot_forward: linear-domain Sinkhorn underflowed (batch element " +
                                 std::to_string(bi) + "); retry with the log-domain solver");
      log_domain = true;
    }
    if (log_domain) detail::sinkhorn_log(prob, bi, options, plan);
    plan.used_log_domain[bi] = log_domain;
    detail::finish_plan(plan, bi, prob.row_marginal(bi), prob.col_marginal(bi));
    plan.converged[bi] = plan.residual[bi] <= static_cast<Real>(options.tol);
  });
  return plan;
}

/// gamma [ diag(row sums 2..m)  P_{2:m,:} ; P_{2:m,:}^T  diag(col sums) ]
/// for one batch element, using the plan's own marginals (which is exactly
/// A H^{-1} A^T for H^{-1} = diag(gamma P)).
template <class Real>
Matrix<Real> assemble_AHinvAt(const TransportPlan<Real>& plan, std::size_t bi, Real gamma) {
  const std::size_t m = plan.m, n = plan.n, p = m - 1;
  const auto P = plan.plan(bi);
  Matrix<Real> out(p + n, p + n);
  for (std::size_t i = 0; i < p; ++i) {
    out(i, i) = gamma * plan.row_sums[bi * m + i + 1];
    for (std::size_t j = 0; j < n; ++j) {
      out(i, p + j) = gamma * P(i + 1, j);
      out(p + j, i) = gamma * P(i + 1, j);
    }
  }
  for (std::size_t j = 0; j < n; ++j) out(p + j, p + j) = gamma * plan.col_sums[bi * n + j];
  return out;
}

namespace detail {

template <class Real>
void check_ot_shapes(const TransportProblem<Real>& prob, const TransportPlan<Real>& plan,
                     std::span<const Real> dJdP) {
  if (plan.batch != prob.batch || plan.m != prob.m || plan.n != prob.n)
    throw DimensionMismatch("ot_backward: plan shape differs from problem");
  if (dJdP.size() != prob.batch * prob.m * prob.n)
    throw DimensionMismatch("ot_backward: dJdP must be batch x m x n");
}

template <class Real>
void ot_backward_implicit(const TransportProblem<Real>& prob, const TransportPlan<Real>& plan, std::size_t bi,
                          std::span<const Real> dJdP, bool block, OtGradients<Real>& out) {
  const std::size_t m = prob.m, n = prob.n, p = m - 1;
  const Real gamma = prob.gamma;
  const auto P = plan.plan(bi);
  Real* dM = out.dJdM.data() + bi * m * n;
  const Real* G = dJdP.data() + bi * m * n;

  // -v^T H^{-1} B with B = I: the gradient with the constraints ignored.
  for (std::size_t k = 0; k < m * n; ++k) dM[k] = -gamma * P.data[k] * G[k];

  // Multiplication by A is row sums (rows 2..m) and column sums.
  tracked_vector<Real> first(p), second(n, Real(0));
  for (std::size_t i = 0; i < m; ++i) {
    Real sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      sum += dM[i * n + j];
      second[j] += dM[i * n + j];
    }
    if (i > 0) first[i - 1] = sum;
  }

  if (m == 1) {
    // Single row: the column constraints pin P entirely.
    for (std::size_t j = 0; j < n; ++j) second[j] /= plan.col_sums[bi * n + j];
  } else if (block) {
    const std::span<const Real> d1(plan.row_sums.data() + bi * m + 1, p);
    const std::span<const Real> d2(plan.col_sums.data() + bi * n, n);
    const MatrixView<Real> coupling{P.data + n, p, n, n};
    try {
      DiagonalBlockSolver<Real>(d1, coupling, d2).solve_in_place(first, second);
    } catch (const NotPositiveDefinite& e) {
      throw NotPositiveDefinite(std::string("ot_backward: Schur complement is not positive definite (") +
                                    e.what() + "); run more forward iterations or lower gamma",
                                e.pivot());
    }
  } else {
    Matrix<Real> system = assemble_AHinvAt(plan, bi, Real(1));
    const auto factor = cholesky_factorize(std::move(system));
    tracked_vector<Real> rhs(p + n);
    std::copy(first.begin(), first.end(), rhs.begin());
    std::copy(second.begin(), second.end(), rhs.begin() + p);
    factor.solve_in_place(rhs);
    std::copy(rhs.begin(), rhs.begin() + p, first.begin());
    std::copy(rhs.begin() + p, rhs.end(), second.begin());
  }

  for (std::size_t i = 0; i < m; ++i) {
    const Real row_term = i > 0 ? first[i - 1] : Real(0);
    for (std::size_t j = 0; j < n; ++j) dM[i * n + j] -= (row_term + second[j]) * P(i, j);
  }
  Real* dr = out.dJdr.data() + bi * m;
  Real* dc = out.dJdc.data() + bi * n;
  dr[0] = Real(0);
  for (std::size_t i = 1; i < m; ++i) dr[i] = -first[i - 1] / gamma;
  for (std::size_t j = 0; j < n; ++j) dc[j] = -second[j] / gamma;
}

/// Reverse-mode sweep through a replay of the linear-domain recurrence.
template <class Real>
void ot_backward_unrolled(const TransportProblem<Real>& prob, const TransportPlan<Real>& plan, std::size_t bi,
                          std::span<const Real> dJdP, OtGradients<Real>& out) {
  const std::size_t m = prob.m, n = prob.n;
  const std::size_t T = plan.iterations[bi];
  const Real gamma = prob.gamma;
  const auto r = prob.row_marginal(bi);
  const auto c = prob.col_marginal(bi);
  const Real* G = dJdP.data() + bi * m * n;
  if (T == 0) throw InvalidArgument("ot_backward(unrolled): plan records zero Sinkhorn iterations");

  Matrix<Real> kernel(m, n);
  if (!build_kernel(prob.cost(bi), r, c, gamma, kernel))
    throw NumericalUnderflow("ot_backward(unrolled): kernel underflows; the unrolled baseline needs the linear domain");
  const LinearSinkhorn<Real> solver{view(kernel), r, c};

  // Tape: u_1..u_T and v_0..v_T.
  tracked_vector<Real> us(T * m), vs((T + 1) * n);
  tracked_vector<Real> kv(m), ktu(n);
  std::fill(vs.begin(), vs.begin() + n, Real(1));
  solver.matvec(std::span<const Real>(vs.data(), n), kv);
  for (std::size_t t = 1; t <= T; ++t) {
    std::span<Real> u(us.data() + (t - 1) * m, m), v(vs.data() + t * n, n);
    std::copy(vs.begin() + (t - 1) * n, vs.begin() + t * n, v.begin());
    if (!solver.step(u, v, kv, ktu))
      throw NumericalUnderflow("ot_backward(unrolled): replayed scalings left the representable range");
  }

  // Kbar accumulates dL/dK in the output buffer.
  Real* kbar = out.dJdM.data() + bi * m * n;
  Real* rbar = out.dJdr.data() + bi * m;
  Real* cbar = out.dJdc.data() + bi * n;
  std::fill(rbar, rbar + m, Real(0));
  std::fill(cbar, cbar + n, Real(0));
  tracked_vector<Real> ubar(m, Real(0)), vbar(n, Real(0)), abar(m), bbar(n);

  {
    const Real* uT = us.data() + (T - 1) * m;
    const Real* vT = vs.data() + T * n;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const Real g = G[i * n + j];
        kbar[i * n + j] = g * uT[i] * vT[j];
        ubar[i] += g * kernel(i, j) * vT[j];
        vbar[j] += g * kernel(i, j) * uT[i];
      }
    }
    for (std::size_t t = T; t >= 1; --t) {
      const Real* u = us.data() + (t - 1) * m;
      const Real* v = vs.data() + t * n;
      const Real* vprev = vs.data() + (t - 1) * n;
      // v = c / b with b = K^T u
      for (std::size_t j = 0; j < n; ++j) {
        const Real b = c[j] / v[j];
        bbar[j] = -vbar[j] * v[j] / b;
        cbar[j] += vbar[j] / b;
      }
      // b = K^T u
      for (std::size_t i = 0; i < m; ++i) {
        Real sum = 0;
        for (std::size_t j = 0; j < n; ++j) {
          sum += kernel(i, j) * bbar[j];
          kbar[i * n + j] += u[i] * bbar[j];
        }
        ubar[i] += sum;
      }
      // u = r / a with a = K v_prev
      for (std::size_t i = 0; i < m; ++i) {
        const Real a = r[i] / u[i];
        abar[i] = -ubar[i] * u[i] / a;
        rbar[i] += ubar[i] / a;
        ubar[i] = Real(0);
      }
      // a = K v_prev
      std::fill(vbar.begin(), vbar.end(), Real(0));
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          kbar[i * n + j] += abar[i] * vprev[j];
          vbar[j] += kernel(i, j) * abar[i];
        }
      }
    }
  }

  // K = r_i c_j exp(-gamma M_ij)
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const Real weighted = kbar[i * n + j] * kernel(i, j);
      rbar[i] += weighted / r[i];
      cbar[j] += weighted / c[j];
      kbar[i * n + j] = -gamma * weighted;
    }
  }
  // Only directions preserving 1^T r = 1^T c are meaningful; pick the
  // representative with dJ/dr_1 = 0 to match the implicit convention.
  const Real shift = rbar[0];
  for (std::size_t i = 0; i < m; ++i) rbar[i] -= shift;
  for (std::size_t j = 0; j < n; ++j) cbar[j] += shift;
}

}  // namespace detail

/// Gradients of J w.r.t. M, r and c given dJ/dP. dJdr[0] is zero by the
/// removed-constraint convention; only directions that keep 1^T r = 1^T c
/// are meaningful for the marginal gradients.
template <class Real>
OtGradients<Real> ot_backward(const TransportProblem<Real>& prob, const TransportPlan<Real>& plan,
                              std::span<const Real> dJdP,
                              OtBackwardMethod method = OtBackwardMethod::structured_block,
                              bool parallel_batch = false) {
  detail::check_ot_shapes(prob, plan, dJdP);
  OtGradients<Real> out;
  out.dJdM.resize(prob.batch * prob.m * prob.n);
  out.dJdr.resize(prob.batch * prob.m);
  out.dJdc.resize(prob.batch * prob.n);
  detail::for_each_batch(prob.batch, parallel_batch, [&](std::size_t bi) {
    switch (method) {
      case OtBackwardMethod::structured_block:
        detail::ot_backward_implicit(prob, plan, bi, dJdP, true, out);
        break;
      case OtBackwardMethod::structured_full:
        detail::ot_backward_implicit(prob, plan, bi, dJdP, false, out);
        break;
      case OtBackwardMethod::unrolled:
        detail::ot_backward_unrolled(prob, plan, bi, dJdP, out);
        break;
    }
  });
  return out;
}

/// dJdM = -gamma P .* dJdP, i.e. the implicit gradient with the marginal
/// constraints ignored. Marginal gradients are zero.
template <class Real>
OtGradients<Real> ot_backward_constraints_ignored(const TransportProblem<Real>& prob,
                                                  const TransportPlan<Real>& plan, std::span<const Real> dJdP) {
  detail::check_ot_shapes(prob, plan, dJdP);
  OtGradients<Real> out;
  out.dJdM.resize(prob.batch * prob.m * prob.n);
  out.dJdr.assign(prob.batch * prob.m, Real(0));
  out.dJdc.assign(prob.batch * prob.n, Real(0));
  for (std::size_t k = 0; k < out.dJdM.size(); ++k) out.dJdM[k] = -prob.gamma * plan.P[k] * dJdP[k];
  return out;
}

/// Gradient w.r.t. r_tilde for r = r_tilde / (1^T r_tilde):
/// g^T (I - r 1^T) / scale, per batch element. `r` and `g` are b x k.
template <class Real>
tracked_vector<Real> simplex_reparam_vjp(std::span<const Real> r, std::span<const Real> scale,
                                         std::span<const Real> g) {
  if (r.size() != g.size() || scale.empty() || r.size() % scale.size() != 0)
    throw DimensionMismatch("simplex_reparam_vjp: r and g must be batch x k with one scale per batch");
  const std::size_t k = r.size() / scale.size();
  tracked_vector<Real> out(r.size());
  for (std::size_t bi = 0; bi < scale.size(); ++bi) {
    if (!(scale[bi] > Real(0))) throw InvalidArgument("simplex_reparam_vjp: scale must be positive");
    Real gr = 0;
    for (std::size_t i = 0; i < k; ++i) gr += g[bi * k + i] * r[bi * k + i];
    for (std::size_t i = 0; i < k; ++i) out[bi * k + i] = (g[bi * k + i] - gr) / scale[bi];
  }
  return out;
}

}  // namespace ddn
