#pragma once

// Finite-difference vector-Jacobian products and their comparison against
// analytic backward passes.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ddn/errors.hpp"

namespace ddn {

enum class StepMode {
  /// step * max(1, |x_i|)
  relative,
  absolute,
};

struct VjpReport {
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  bool passed = true;
  std::vector<double> per_coordinate;
};

/// g_i = (<v, f(x + h e_i)> - <v, f(x - h e_i)>) / (2 h).
///
/// `forward` maps std::span<const double> to a contiguous range of doubles.
/// For implicit nodes the inner solve must be run far tighter than the
/// expected gradient accuracy; the harness differentiates the solver output,
/// not the ideal solution map.
template <class F>
std::vector<double> fd_vjp(F&& forward, std::span<const double> x, std::span<const double> v,
                           double step = 1e-6, StepMode mode = StepMode::relative) {
  if (!(step > 0.0)) throw InvalidArgument("fd_vjp: step must be positive");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> grad(x.size());

  auto contract = [&](std::span<const double> at) {
    const auto y = forward(at);
    if (std::size(y) != v.size()) throw DimensionMismatch("fd_vjp: forward output length differs from v");
    double sum = 0.0;
    std::size_t k = 0;
    for (double value : y) {
      if (!std::isfinite(value)) throw NonFinite("fd_vjp: forward returned a non-finite value");
      sum += v[k++] * value;
    }
    return sum;
  };

  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = mode == StepMode::relative ? step * std::max(1.0, std::abs(x[i])) : step;
    probe[i] = x[i] + h;
    const double plus = contract(probe);
    probe[i] = x[i] - h;
    const double minus = contract(probe);
    probe[i] = x[i];
    grad[i] = (plus - minus) / (2.0 * h);
  }
  return grad;
}

/// Elementwise check |a - b| <= atol + rtol |b|. The relative error of an
/// entry is |a - b| / (|b| + atol / rtol), so passed <=> max_rel_err <= rtol.
inline VjpReport compare_vjp(std::span<const double> analytic, std::span<const double> numeric, double rtol,
                             double atol = 0.0, bool keep_per_coordinate = false) {
  if (analytic.size() != numeric.size()) throw DimensionMismatch("compare_vjp: lengths differ");
  if (!(rtol > 0.0) || atol < 0.0) throw InvalidArgument("compare_vjp: need rtol > 0 and atol >= 0");
  VjpReport report;
  const double floor = atol / rtol;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    const double denom = std::abs(numeric[i]) + floor;
    double rel = 0.0;
    if (diff > 0.0) rel = denom > 0.0 ? diff / denom : std::numeric_limits<double>::infinity();
    if (std::isnan(diff)) rel = std::numeric_limits<double>::infinity();
    report.max_abs_err = std::max(report.max_abs_err, diff);
    report.max_rel_err = std::max(report.max_rel_err, rel);
    if (keep_per_coordinate) report.per_coordinate.push_back(rel);
  }
  report.passed = report.max_rel_err <= rtol;
  return report;
}

}  // namespace ddn
