#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sed {

struct GradCheckCase {
  std::string name;
  double loss_value = 0;
  double max_rel_err = 0;
  int64_t param_count = 0;
};

// Central-finite-difference verification of every loss term and the weighted
// composite on a small model. Stop-gradient targets and re-weighting
// histograms are frozen at the evaluation point, matching their constant role
// in the analytic gradient.
std::vector<GradCheckCase> run_grad_checks(uint64_t seed, double h = 1e-5, int image_size = 32);

}  // namespace sed
