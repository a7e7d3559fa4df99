#pragma once

#include <string>
#include <vector>

namespace varcaps {

struct OpGradReport {
  std::string op;
  double max_rel_error = 0.0;
  int instances = 0;
  int skipped = 0;  // coordinates excluded as non-smooth across all instances
};

/// Finite-difference verification of every recorded primitive and the
/// composite losses, `instances` random instances per operation. The suite
/// passes when every max relative error is at or below 1e-4.
std::vector<OpGradReport> run_gradient_suite(int instances, unsigned seed);

bool gradient_suite_passed(const std::vector<OpGradReport>& reports,
                           double tolerance = 1e-4);

}  // namespace varcaps
