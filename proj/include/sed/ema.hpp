#pragma once

#include <cstdint>
#include <string>

#include "sed/autodiff.hpp"

namespace sed {

enum class EmaPolicy { kNone, kStep, kCosine };

EmaPolicy ema_policy_from_string(const std::string& s);
std::string to_string(EmaPolicy p);

struct EmaSchedule {
  EmaPolicy policy = EmaPolicy::kStep;
  double alpha_start = 0.99;
  double alpha_end = 0.9;
  int64_t milestone_iteration = 0;  // step policy decays once, here
  int64_t total_iterations = 1;     // cosine horizon

  void validate() const;
};

// none: alpha_start; step: alpha_start before the milestone, alpha_end at and
// after it; cosine: alpha_end + (alpha_start - alpha_end)*(1+cos(pi*t/T))/2.
double current_alpha(const EmaSchedule& schedule, int64_t iter);

struct TeacherState {
  ad::ParamVector params;
  EmaSchedule schedule;
  int64_t last_update_iteration = -1;
};

TeacherState init_teacher(const ad::ParamVector& student, const EmaSchedule& schedule);

// theta_t <- alpha * theta_t + (1 - alpha) * theta_s, elementwise.
void ema_update(TeacherState& state, const ad::ParamVector& student, int64_t iter);

}  // namespace sed
