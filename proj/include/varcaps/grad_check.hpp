#pragma once

#include "varcaps/tensor.hpp"

#include <functional>
#include <vector>

namespace varcaps {

/// Scalar-valued function of one tensor, built from recorded operations.
using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  int worst_coord = -1;
  std::vector<int> skipped;  // coordinates excluded as non-smooth
};

/// Compares the reverse-mode gradient of f at x against central differences
/// (f(x+eps) - f(x-eps)) / 2eps, coordinate by coordinate. The relative error
/// uses max(|analytic|, |numeric|, 1e-8) as denominator. Coordinates where
/// the one-sided differences disagree (a kink, e.g. relu probed at 0) are
/// excluded and reported in `skipped`. Non-finite values at a probe point are
/// an error naming the coordinate.
GradCheckResult grad_check(const ScalarFn& f, const Tensor& x,
                           double eps = 1e-5);

}  // namespace varcaps
