#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gfrnet {

struct OpCheckResult {
  std::string op;
  int instances = 0;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Compares analytic gradients of every differentiable graph op against
// central finite differences, in double precision, on `instances` seeded
// random small instances per op (spatial <= 4x4, channels <= 3).
// Draws at non-differentiable points (ReLU near 0, near-tied pool windows)
// are regenerated. `corrupt_op` perturbs that op's analytic gradient before
// comparison; it exists as a negative control for the harness itself.
std::vector<OpCheckResult> run_gradient_checks(uint64_t seed, int instances, double tolerance,
                                               const std::string& corrupt_op = "");

std::string format_gradcheck_report(const std::vector<OpCheckResult>& results);

}  // namespace gfrnet
