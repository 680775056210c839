#include <gtest/gtest.h>

#include <Eigen/Core>

#include <vector>

#include "ddn/ddn_generic.hpp"
#include "ddn/robust_pool.hpp"
#include "ddn/sinkhorn.hpp"
#include "oracle_nodes.hpp"
#include "test_support.hpp"

namespace {

ddn::NodeSpec half_distance(std::size_t m) {
  ddn::NodeSpec spec;
  spec.n_in = m;
  spec.m_out = m;
  spec.objective = [](std::span<const double> x, std::span<const double> u) {
    double s = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) s += 0.5 * (u[k] - x[k]) * (u[k] - x[k]);
    return s;
  };
  return spec;
}

// min ||u||^2 s.t. 1^T u = x (scalar x, m = 3).
ddn::NodeSpec norm_on_hyperplane() {
  ddn::NodeSpec spec;
  spec.n_in = 1;
  spec.m_out = 3;
  spec.p_constraints = 1;
  spec.objective = [](std::span<const double>, std::span<const double> u) {
    return u[0] * u[0] + u[1] * u[1] + u[2] * u[2];
  };
  spec.constraints = [](std::span<const double> x, std::span<const double> u, std::span<double> out) {
    out[0] = u[0] + u[1] + u[2] - x[0];
  };
  return spec;
}

}  // namespace

TEST(AssembleDerivatives, UnconstrainedHalfDistance) {
  const std::vector<double> x{0.3, -1.2, 2.0};
  const auto ws = ddn::assemble_derivatives(half_distance(3), x, x);
  EXPECT_EQ(ws.A.size(), 0);
  EXPECT_EQ(ws.C.size(), 0);
  EXPECT_EQ(ws.lambda.size(), 0);
  EXPECT_TRUE(ws.H.isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-6));
  EXPECT_TRUE(ws.B.isApprox(-Eigen::MatrixXd::Identity(3, 3), 1e-6));
  EXPECT_TRUE(ddn::dy_dx_constrained(ws).isApprox(Eigen::MatrixXd::Identity(3, 3), 1e-6));
}

TEST(AssembleDerivatives, NormOnHyperplane) {
  const double xv = 1.7;
  const std::vector<double> x{xv}, y(3, xv / 3.0);
  const auto ws = ddn::assemble_derivatives(norm_on_hyperplane(), x, y);
  EXPECT_TRUE(ws.A.isApprox(Eigen::RowVector3d::Ones(), 1e-8));
  EXPECT_TRUE(ws.H.isApprox(2.0 * Eigen::MatrixXd::Identity(3, 3), 1e-6));
  EXPECT_LE(ws.B.norm(), 1e-6);
  EXPECT_NEAR(ws.C(0, 0), -1.0, 1e-8);
  EXPECT_NEAR(ws.lambda(0), 2.0 * xv / 3.0, 1e-8);
  EXPECT_TRUE(ws.warnings.empty());
  const Eigen::MatrixXd dy = ddn::dy_dx_constrained(ws);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(dy(k, 0), 1.0 / 3.0, 1e-6);
  // Differentiating h(x, y(x)) = 0.
  EXPECT_LE((ws.A * dy + ws.C).norm(), 1e-6);
}

TEST(AssembleDerivatives, WarnsAwayFromStationaryPoint) {
  const std::vector<double> x{1.0}, y{1.0, 0.0, 0.0};
  const auto ws = ddn::assemble_derivatives(norm_on_hyperplane(), x, y);
  EXPECT_GT(ws.stationarity_residual, 1e-6);
  EXPECT_FALSE(ws.warnings.empty());
}

TEST(AssembleDerivatives, RedundantConstraintsAreRankDeficient) {
  ddn::NodeSpec spec = norm_on_hyperplane();
  spec.p_constraints = 2;
  spec.constraints = [](std::span<const double> x, std::span<const double> u, std::span<double> out) {
    out[0] = u[0] + u[1] + u[2] - x[0];
    out[1] = 2.0 * (u[0] + u[1] + u[2] - x[0]);
  };
  const std::vector<double> x{1.0}, y(3, 1.0 / 3.0);
  EXPECT_THROW(ddn::assemble_derivatives(spec, x, y), ddn::RankDeficient);
}

TEST(AssembleDerivatives, InputChecks) {
  const std::vector<double> x{1.0}, y(2, 0.5);
  EXPECT_THROW(ddn::assemble_derivatives(norm_on_hyperplane(), x, y), ddn::DimensionMismatch);
  ddn::NodeSpec no_objective = half_distance(2);
  no_objective.objective = nullptr;
  EXPECT_THROW(ddn::assemble_derivatives(no_objective, y, y), ddn::InvalidArgument);
}

TEST(DyDxUnconstrained, Examples) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(3, 3);
  EXPECT_TRUE(ddn::dy_dx_unconstrained(I, -I).isApprox(I));
  EXPECT_TRUE(ddn::dy_dx_unconstrained(2.0 * I, -I).isApprox(0.5 * I));
  const auto h = ddn::testing::random_spd(6, 3);
  const auto b = ddn::testing::random_matrix(6, 4, 4);
  const Eigen::MatrixXd H = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(h.values().data(), 6, 6);
  const Eigen::MatrixXd B = Eigen::Map<const Eigen::Matrix<double, -1, -1, Eigen::RowMajor>>(b.values().data(), 6, 4);
  EXPECT_LE((H * ddn::dy_dx_unconstrained(H, B) + B).norm(), 1e-10);
  EXPECT_THROW(ddn::dy_dx_unconstrained(-I, I), ddn::NotPositiveDefinite);
}

TEST(GenericOracle, WelschPoolingJacobian) {
  const std::size_t m = 2, n = 3;
  const auto x = ddn::testing::random_points(1, m, n, 8);
  const ddn::PenaltyKind kind(ddn::Penalty::welsch, 1.0);
  ddn::PoolOptions opts;
  opts.tol = 1e-13;
  const auto res = ddn::pool_forward(x, kind, opts);
  const auto ws = ddn::assemble_derivatives(ddn::testing::make_pool_node(kind, m, n), x.values(), res.y.row(0));
  const Eigen::MatrixXd dy = ddn::dy_dx_constrained(ws);
  const auto jac = ddn::pool_jacobian_naive(x, res.y, kind);
  double scale = dy.cwiseAbs().maxCoeff();
  for (std::size_t p = 0; p < m; ++p)
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t j = 0; j < n; ++j)
        EXPECT_NEAR(jac(0, p, k, j), dy(p, k * n + j), 1e-6 * scale);
}

TEST(GenericOracle, OtConstraintLayout) {
  const std::size_t m = 3, n = 2;
  const auto prob = ddn::testing::random_ot(1, m, n, 2.0, 5);
  ddn::SinkhornOptions opts;
  opts.tol = 1e-14;
  const auto plan = ddn::ot_forward(prob, opts);
  std::vector<double> x(prob.M.begin(), prob.M.end());
  x.insert(x.end(), prob.r.begin(), prob.r.end());
  x.insert(x.end(), prob.c.begin(), prob.c.end());
  const auto ws = ddn::assemble_derivatives(ddn::testing::make_ot_node(m, n, prob.gamma), x,
                                            std::span<const double>(plan.P.data(), plan.P.size()));
  // Rows 2..m of P1 = r, then P^T 1 = c, with P flattened row-wise.
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(m - 1 + n, m * n);
  for (std::size_t i = 1; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) expected(i - 1, i * n + j) = 1.0;
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i) expected(m - 1 + j, i * n + j) = 1.0;
  EXPECT_LE((ws.A - expected).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_TRUE(ws.warnings.empty()) << ws.warnings.front();
  // The Sinkhorn plan is stationary and H^{-1} is diag(gamma P).
  for (std::size_t k = 0; k < m * n; ++k) EXPECT_NEAR(1.0 / ws.H(k, k), prob.gamma * plan.P[k], 1e-6);
}
