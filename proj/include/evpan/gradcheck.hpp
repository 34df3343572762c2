#pragma once

// Central finite-difference gradients and comparison helpers. The numeric
// gradient only ever evaluates loss values, so it is independent of any
// analytic gradient code it is checked against.

#include <cmath>
#include <cstddef>

#include "evpan/grid.hpp"

namespace evpan {

// d value / d grid[i] by central differences, one evaluation pair per element.
template <typename ValueFn>
DenseGrid central_difference_gradient(const DenseGrid& point, ValueFn&& value_of,
                                      double step = 1e-5) {
  DenseGrid grad(point.height, point.width, point.channels);
  DenseGrid probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double original = probe.data[i];
    probe.data[i] = original + step;
    const double forward = value_of(probe);
    probe.data[i] = original - step;
    const double backward = value_of(probe);
    probe.data[i] = original;
    grad.data[i] = (forward - backward) / (2.0 * step);
  }
  return grad;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Max over elements of |a - n| / max(|a| + |n|, 1), a scale-aware relative
// error that degrades to absolute error for small gradients.
inline GradCheckResult compare_gradients(const DenseGrid& analytic, const DenseGrid& numeric) {
  if (!analytic.same_shape(numeric))
    throw ValidationError("gradient check: shape mismatch");
  GradCheckResult result;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data[i], n = numeric.data[i];
    const double rel = std::fabs(a - n) / std::max(std::fabs(a) + std::fabs(n), 1.0);
    if (rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = i;
      result.analytic_at_worst = a;
      result.numeric_at_worst = n;
    }
  }
  return result;
}

}  // namespace evpan
