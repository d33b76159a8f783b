#include "sed/ema.hpp"

#include <cmath>
#include <stdexcept>

namespace sed {

EmaPolicy ema_policy_from_string(const std::string& s) {
  if (s == "none") return EmaPolicy::kNone;
  if (s == "step") return EmaPolicy::kStep;
  if (s == "cosine") return EmaPolicy::kCosine;
  throw std::invalid_argument("ema: unknown policy '" + s + "'");
}

std::string to_string(EmaPolicy p) {
  switch (p) {
    case EmaPolicy::kNone: return "none";
    case EmaPolicy::kStep: return "step";
    case EmaPolicy::kCosine: return "cosine";
  }
  return "?";
}

void EmaSchedule::validate() const {
  auto in01 = [](double a) { return a >= 0.0 && a <= 1.0; };
  if (!in01(alpha_start) || !in01(alpha_end))
    throw std::invalid_argument("ema: alpha must be in [0, 1]");
  if (total_iterations < 1) throw std::invalid_argument("ema: total_iterations must be >= 1");
}

double current_alpha(const EmaSchedule& s, int64_t iter) {
  s.validate();
  switch (s.policy) {
    case EmaPolicy::kNone:
      return s.alpha_start;
    case EmaPolicy::kStep:
      return iter < s.milestone_iteration ? s.alpha_start : s.alpha_end;
    case EmaPolicy::kCosine: {
      const double t = static_cast<double>(iter) / static_cast<double>(s.total_iterations);
      return s.alpha_end + (s.alpha_start - s.alpha_end) * 0.5 * (1.0 + std::cos(M_PI * t));
    }
  }
  return s.alpha_start;
}

TeacherState init_teacher(const ad::ParamVector& student, const EmaSchedule& schedule) {
  schedule.validate();
  return {student, schedule, -1};
}

void ema_update(TeacherState& state, const ad::ParamVector& student, int64_t iter) {
  if (iter <= state.last_update_iteration)
    throw std::invalid_argument("ema_update: iteration must advance");
  const double alpha = current_alpha(state.schedule, iter);
  for (auto& [name, t] : state.params) {
    auto it = student.find(name);
    if (it == student.end() || !it->second.same_shape(t))
      throw std::invalid_argument("ema_update: student/teacher shape mismatch at " + name);
    const Tensor& s = it->second;
    for (int64_t i = 0; i < t.size(); ++i) t[i] = alpha * t[i] + (1.0 - alpha) * s[i];
  }
  state.last_update_iteration = iter;
}

}  // namespace sed
