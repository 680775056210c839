#include <gtest/gtest.h>

#include <cmath>

#include "ddn/penalties.hpp"

using ddn::Penalty;
using ddn::PenaltyKind;

TEST(Phi, TableExamples) {
  EXPECT_DOUBLE_EQ(ddn::phi_value(PenaltyKind(Penalty::quadratic), 3.0), 4.5);
  EXPECT_EQ(ddn::phi_value(PenaltyKind(Penalty::welsch, 1.0), 0.0), 0.0);
  EXPECT_DOUBLE_EQ(ddn::phi_value(PenaltyKind(Penalty::huber, 1.0), 2.0), 1.5);
}

TEST(Phi, ZeroAtOriginAndNonNegative) {
  for (Penalty p : ddn::kAllPenalties) {
    const PenaltyKind kind(p, 0.7);
    EXPECT_EQ(ddn::phi_value(kind, 0.0), 0.0) << ddn::penalty_name(p);
    for (double z : {1e-8, 0.3, 0.7, 2.0, 50.0}) EXPECT_GE(ddn::phi_value(kind, z), 0.0);
  }
}

TEST(Phi, ClosedFormsAwayFromOrigin) {
  const double a = 1.3, z = 2.1;
  EXPECT_NEAR(ddn::phi_value(PenaltyKind(Penalty::pseudo_huber, a), z), a * a * (std::sqrt(1 + (z / a) * (z / a)) - 1),
              1e-14);
  EXPECT_NEAR(ddn::phi_value(PenaltyKind(Penalty::welsch, a), z), 1 - std::exp(-z * z / (2 * a * a)), 1e-15);
  EXPECT_DOUBLE_EQ(ddn::phi_value(PenaltyKind(Penalty::truncated_quadratic, a), z), 0.5 * a * a);
  EXPECT_DOUBLE_EQ(ddn::phi_value(PenaltyKind(Penalty::truncated_quadratic, a), 1.0), 0.5);
}

TEST(Kappa, TableExamples) {
  for (double z : {0.0, 0.5, 3.0, 100.0}) {
    const auto k = ddn::kappa(PenaltyKind(Penalty::quadratic), z);
    EXPECT_EQ(k.kappa1, 1.0);
    EXPECT_EQ(k.kappa2, 0.0);
  }
  const auto w = ddn::kappa(PenaltyKind(Penalty::welsch, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(w.kappa1, 1.0);
  EXPECT_DOUBLE_EQ(w.kappa2, -1.0);
  const auto h = ddn::kappa(PenaltyKind(Penalty::huber, 1.0), 2.0);
  EXPECT_DOUBLE_EQ(h.kappa1, 0.5);
  EXPECT_DOUBLE_EQ(h.kappa2, -0.125);
  const auto hi = ddn::kappa(PenaltyKind(Penalty::huber, 1.0), 0.5);
  EXPECT_EQ(hi.kappa1, 1.0);
  EXPECT_EQ(hi.kappa2, 0.0);
}

TEST(Kappa, AnalyticLimitsAtZero) {
  const double a = 2.0;
  const auto ph = ddn::kappa(PenaltyKind(Penalty::pseudo_huber, a), 0.0);
  EXPECT_DOUBLE_EQ(ph.kappa1, 1.0);
  EXPECT_DOUBLE_EQ(ph.kappa2, -1.0 / (a * a));
  const auto w = ddn::kappa(PenaltyKind(Penalty::welsch, a), 0.0);
  EXPECT_DOUBLE_EQ(w.kappa1, 1.0 / (a * a));
  EXPECT_DOUBLE_EQ(w.kappa2, -1.0 / (a * a * a * a));
  const auto t = ddn::kappa(PenaltyKind(Penalty::truncated_quadratic, a), 0.0);
  EXPECT_EQ(t.kappa1, 1.0);
}

TEST(Kappa, SignsHold) {
  for (Penalty p : ddn::kAllPenalties) {
    const PenaltyKind kind(p, 0.8);
    for (double z = 0.0; z < 10.0; z += 0.37) {
      const auto k = ddn::kappa(kind, z);
      EXPECT_GE(k.kappa1, 0.0);
      EXPECT_LE(k.kappa2, 0.0);
    }
  }
}

// kappa1 = phi'/z and kappa2 = (phi'' - kappa1)/z^2 against central
// differences of phi_value, away from the branch points.
TEST(Kappa, ConsistentWithFiniteDifferencesOfPhi) {
  for (Penalty p : ddn::kAllPenalties) {
    const PenaltyKind kind(p, 1.1);
    for (double z : {0.05, 0.4, 0.9, 1.6, 2.5, 4.0}) {
      if (std::abs(z - kind.alpha) <= 1e-3) continue;
      const double h1 = 1e-6 * std::max(1.0, z);
      const double d1 = (ddn::phi_value(kind, z + h1) - ddn::phi_value(kind, z - h1)) / (2 * h1);
      // A second difference needs a larger step to stay above round-off.
      const double h2 = 1e-4 * std::max(1.0, z);
      const double d2 =
          (ddn::phi_value(kind, z + h2) - 2 * ddn::phi_value(kind, z) + ddn::phi_value(kind, z - h2)) / (h2 * h2);
      const auto k = ddn::kappa(kind, z);
      const double k1 = d1 / z;
      const double k2 = (d2 - k.kappa1) / (z * z);
      EXPECT_NEAR(k.kappa1, k1, 1e-4 * std::max(1.0, std::abs(k1))) << ddn::penalty_name(p) << " z=" << z;
      EXPECT_NEAR(k.kappa2, k2, 1e-4 * std::max(1.0, std::abs(k2))) << ddn::penalty_name(p) << " z=" << z;
    }
  }
}

TEST(Kappa, BranchContinuity) {
  const double a = 0.9;
  for (Penalty p : {Penalty::huber, Penalty::pseudo_huber}) {
    const PenaltyKind kind(p, a);
    const double left = ddn::kappa(kind, a).kappa1;
    const double right = ddn::kappa(kind, std::nextafter(a, 10.0)).kappa1;
    EXPECT_LE(std::abs(left - right), 1e-12) << ddn::penalty_name(p);
  }
  const PenaltyKind trunc(Penalty::truncated_quadratic, a);
  EXPECT_EQ(ddn::kappa(trunc, a).kappa1, 1.0);
  EXPECT_EQ(ddn::kappa(trunc, std::nextafter(a, 10.0)).kappa1, 0.0);
}

TEST(Kappa, Kappa2IdenticallyZeroForDiagonalPenalties) {
  for (Penalty p : {Penalty::quadratic, Penalty::truncated_quadratic}) {
    const PenaltyKind kind(p, 0.5);
    EXPECT_TRUE(kind.kappa2_identically_zero());
    for (double z = 0.0; z < 5.0; z += 0.01) EXPECT_EQ(ddn::kappa(kind, z).kappa2, 0.0);
  }
  for (Penalty p : {Penalty::pseudo_huber, Penalty::huber, Penalty::welsch})
    EXPECT_FALSE(PenaltyKind(p).kappa2_identically_zero());
}

TEST(PenaltyKind, RejectsNonPositiveAlpha) {
  EXPECT_THROW(PenaltyKind(Penalty::huber, 0.0), ddn::InvalidArgument);
  EXPECT_THROW(PenaltyKind(Penalty::welsch, -1.0), ddn::InvalidArgument);
  EXPECT_THROW(PenaltyKind(Penalty::welsch, std::nan("")), ddn::InvalidArgument);
}

TEST(PenaltyNames, CaseInsensitiveRoundTrip) {
  for (Penalty p : ddn::kAllPenalties) EXPECT_EQ(ddn::parse_penalty(ddn::penalty_name(p)), p);
  EXPECT_EQ(ddn::parse_penalty("Pseudo-Huber"), Penalty::pseudo_huber);
  EXPECT_EQ(ddn::parse_penalty("WELSCH"), Penalty::welsch);
  EXPECT_EQ(ddn::parse_penalty("Trunc-Quad"), Penalty::truncated_quadratic);
  EXPECT_THROW(ddn::parse_penalty("cauchy"), ddn::InvalidArgument);
}
