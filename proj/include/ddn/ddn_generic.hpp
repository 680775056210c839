#pragma once

// Generic differentiation of an equality-constrained declarative node
//
//   y(x) = argmin_u f(x, u)  s.t.  h(x, u) = 0
//
// from black-box evaluators. All partial derivatives are taken by central
// finite differences and combined as
//
//   Dy(x) = H^{-1} A^T (A H^{-1} A^T)^{-1} (A H^{-1} B - C) - H^{-1} B
//
// with A = D_Y h, B = D2_XY f - sum_i lambda_i D2_XY h_i, C = D_X h,
// H = D2_YY f - sum_i lambda_i D2_YY h_i and lambda^T A = D_Y f.
//
// This is a correctness oracle for small problems (m * n up to about 1e4);
// it does no structure exploitation at all. Dense algebra is done with Eigen
// so that it shares no code with the structured backward passes.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ddn/errors.hpp"

namespace ddn {

struct NodeSpec {
  std::size_t n_in = 0;
  std::size_t m_out = 0;
  std::size_t p_constraints = 0;
  std::function<double(std::span<const double> x, std::span<const double> u)> objective;
  /// Writes h(x, u) into `out` (length p_constraints). May be empty when p = 0.
  std::function<void(std::span<const double> x, std::span<const double> u, std::span<double> out)> constraints;
};

struct ImplicitWorkspace {
  Eigen::MatrixXd A;  // p x m
  Eigen::MatrixXd B;  // m x n
  Eigen::MatrixXd C;  // p x n
  Eigen::MatrixXd H;  // m x m
  Eigen::VectorXd lambda;
  /// ||D_Y f - lambda^T A||; large values mean y is not a stationary point.
  double stationarity_residual = 0.0;
  std::vector<std::string> warnings;
};

struct FdSteps {
  /// First derivatives: first * max(1, |coordinate|).
  double first = 1e-5;
  /// Second derivatives: second * max(1, |coordinate|).
  double second = 1e-4;
};

inline constexpr double kStationarityWarning = 1e-6;
inline constexpr double kRankTolerance = 1e-8;

namespace detail {

inline double fd_scale(double value) { return std::max(1.0, std::abs(value)); }

/// Evaluates a scalar function of the concatenated (x, u) vector.
class JointFunction {
 public:
  JointFunction(std::size_t n_in, std::function<double(std::span<const double>, std::span<const double>)> fn)
      : n_in_(n_in), fn_(std::move(fn)) {}

  double operator()(const std::vector<double>& z) const {
    const std::span<const double> all(z);
    return fn_(all.first(n_in_), all.subspan(n_in_));
  }

 private:
  std::size_t n_in_;
  std::function<double(std::span<const double>, std::span<const double>)> fn_;
};

inline double fd_first(const JointFunction& f, std::vector<double>& z, std::size_t i, double rel) {
  const double h = rel * fd_scale(z[i]);
  const double saved = z[i];
  z[i] = saved + h;
  const double plus = f(z);
  z[i] = saved - h;
  const double minus = f(z);
  z[i] = saved;
  return (plus - minus) / (2.0 * h);
}

/// Central second difference with steps h_i = rel * max(1, |z_i|).
inline double fd_second_raw(const JointFunction& f, std::vector<double>& z, std::size_t i, std::size_t j,
                            double rel) {
  const double hi = rel * fd_scale(z[i]);
  const double si = z[i];
  if (i == j) {
    const double centre = f(z);
    z[i] = si + hi;
    const double plus = f(z);
    z[i] = si - hi;
    const double minus = f(z);
    z[i] = si;
    return (plus - 2.0 * centre + minus) / (hi * hi);
  }
  const double hj = rel * fd_scale(z[j]);
  const double sj = z[j];
  auto at = [&](double di, double dj) {
    z[i] = si + di;
    z[j] = sj + dj;
    const double value = f(z);
    z[i] = si;
    z[j] = sj;
    return value;
  };
  return (at(hi, hj) - at(hi, -hj) - at(-hi, hj) + at(-hi, -hj)) / (4.0 * hi * hj);
}

// One Richardson step on top of the O(h^2) stencil. Entropy terms like
// p log p have f'''' ~ 1 / p^3, which left ~1e-6 relative error at h = 1e-4.
inline double fd_second(const JointFunction& f, std::vector<double>& z, std::size_t i, std::size_t j,
                        double rel) {
  return (4.0 * fd_second_raw(f, z, i, j, rel) - fd_second_raw(f, z, i, j, 2.0 * rel)) / 3.0;
}

}  // namespace detail

/// Builds A, B, C, H and lambda at a stationary point y of the problem at x.
inline ImplicitWorkspace assemble_derivatives(const NodeSpec& spec, std::span<const double> x,
                                         std::span<const double> y, const FdSteps& steps = {}) {
  const std::size_t n = spec.n_in, m = spec.m_out, p = spec.p_constraints;
  if (x.size() != n || y.size() != m) throw DimensionMismatch("assemble_derivatives: x or y has the wrong length");
  if (!spec.objective) throw InvalidArgument("assemble_derivatives: objective is required");
  if (p > 0 && !spec.constraints) throw InvalidArgument("assemble_derivatives: constraints callable is required");
  if (p >= m && m > 0) throw InvalidArgument("assemble_derivatives: need fewer constraints than outputs");

  std::vector<double> z(x.begin(), x.end());
  z.insert(z.end(), y.begin(), y.end());
  const auto u_index = [n](std::size_t k) { return n + k; };

  std::vector<detail::JointFunction> fns;
  fns.emplace_back(n, spec.objective);
  for (std::size_t i = 0; i < p; ++i) {
    fns.emplace_back(n, [&spec, i, p](std::span<const double> xs, std::span<const double> us) {
      std::vector<double> out(p);
      spec.constraints(xs, us, out);
      return out[i];
    });
  }

  ImplicitWorkspace ws;
  Eigen::VectorXd grad_f(m);
  for (std::size_t k = 0; k < m; ++k) grad_f(k) = detail::fd_first(fns[0], z, u_index(k), steps.first);
  ws.A.resize(p, m);
  ws.C.resize(p, n);
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < m; ++k) ws.A(i, k) = detail::fd_first(fns[i + 1], z, u_index(k), steps.first);
    for (std::size_t l = 0; l < n; ++l) ws.C(i, l) = detail::fd_first(fns[i + 1], z, l, steps.first);
  }

  ws.lambda = Eigen::VectorXd::Zero(p);
  if (p > 0) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(ws.A.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    if (sv(sv.size() - 1) < kRankTolerance * sv(0))
      throw RankDeficient("assemble_derivatives: constraint Jacobian A is rank deficient (redundant constraints?)");
    ws.lambda = svd.solve(grad_f);
  }
  ws.stationarity_residual = (grad_f - ws.A.transpose() * ws.lambda).norm();
  if (ws.stationarity_residual > kStationarityWarning)
    ws.warnings.push_back("y does not look stationary: ||D_Y f - lambda^T A|| = " +
                          std::to_string(ws.stationarity_residual));

  ws.H = Eigen::MatrixXd::Zero(m, m);
  ws.B = Eigen::MatrixXd::Zero(m, n);
  for (std::size_t f = 0; f < fns.size(); ++f) {
    const double weight = f == 0 ? 1.0 : -ws.lambda(f - 1);
    if (weight == 0.0) continue;
    for (std::size_t k = 0; k < m; ++k) {
      for (std::size_t q = 0; q <= k; ++q) {
        const double value = weight * detail::fd_second(fns[f], z, u_index(k), u_index(q), steps.second);
        ws.H(k, q) += value;
        if (q != k) ws.H(q, k) += value;
      }
      for (std::size_t l = 0; l < n; ++l)
        ws.B(k, l) += weight * detail::fd_second(fns[f], z, u_index(k), l, steps.second);
    }
  }
  ws.H = 0.5 * (ws.H + ws.H.transpose()).eval();
  return ws;
}

/// -H^{-1} B for unconstrained problems.
inline Eigen::MatrixXd dy_dx_unconstrained(const Eigen::MatrixXd& H, const Eigen::MatrixXd& B,
                                           double regularization = 0.0) {
  if (H.rows() != H.cols() || H.rows() != B.rows())
    throw DimensionMismatch("dy_dx_unconstrained: H must be m x m and B m x n");
  const Eigen::MatrixXd reg = H + regularization * Eigen::MatrixXd::Identity(H.rows(), H.cols());
  Eigen::LLT<Eigen::MatrixXd> llt(reg);
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("dy_dx_unconstrained: H is not positive definite", 0);
  return -llt.solve(B);
}

inline Eigen::MatrixXd dy_dx_constrained(const ImplicitWorkspace& ws, double regularization = 0.0) {
  const auto m = ws.H.rows();
  if (ws.A.rows() == 0) return dy_dx_unconstrained(ws.H, ws.B, regularization);
  const Eigen::MatrixXd reg = ws.H + regularization * Eigen::MatrixXd::Identity(m, m);
  Eigen::LLT<Eigen::MatrixXd> h_llt(reg);
  if (h_llt.info() != Eigen::Success) throw NotPositiveDefinite("dy_dx_constrained: H is not positive definite", 0);
  const Eigen::MatrixXd hinv_at = h_llt.solve(ws.A.transpose());
  const Eigen::MatrixXd hinv_b = h_llt.solve(ws.B);
  Eigen::LLT<Eigen::MatrixXd> s_llt(ws.A * hinv_at);
  if (s_llt.info() != Eigen::Success)
    throw NotPositiveDefinite("dy_dx_constrained: A H^{-1} A^T is not positive definite", 0);
  return hinv_at * s_llt.solve(ws.A * hinv_b - ws.C) - hinv_b;
}

}  // namespace ddn
