#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "sed/ema.hpp"
#include "sed/rng.hpp"

using namespace sed;
using ad::ParamVector;

namespace {

ParamVector random_params(uint64_t seed) {
  Rng rng(seed);
  ParamVector p;
  p["a"] = Tensor({3, 2});
  p["b"] = Tensor({5});
  for (auto& [name, t] : p)
    for (double& v : t.v) v = rng.uniform(-1, 1);
  return p;
}

double max_gap(const ParamVector& a, const ParamVector& b) {
  double m = 0;
  for (const auto& [name, t] : a)
    for (int64_t i = 0; i < t.size(); ++i) m = std::max(m, std::abs(t[i] - b.at(name)[i]));
  return m;
}

}  // namespace

TEST_CASE("init_teacher copies deeply") {
  ParamVector student = random_params(1);
  TeacherState t = init_teacher(student, {EmaPolicy::kStep, 0.99, 0.9, 100, 1000});
  CHECK(max_gap(t.params, student) == 0.0);
  student["a"][0] += 5.0;  // mutate the student afterwards
  CHECK(t.params["a"][0] != student["a"][0]);
}

TEST_CASE("current_alpha schedules") {
  const EmaSchedule step{EmaPolicy::kStep, 0.99, 0.9, 120000, 180000};
  CHECK(current_alpha(step, 0) == doctest::Approx(0.99));
  CHECK(current_alpha(step, 119999) == doctest::Approx(0.99));
  CHECK(current_alpha(step, 120000) == doctest::Approx(0.9));
  CHECK(current_alpha(step, 180000) == doctest::Approx(0.9));

  const EmaSchedule cos{EmaPolicy::kCosine, 0.996, 0.9, 0, 1000};
  CHECK(current_alpha(cos, 0) == doctest::Approx(0.996));
  CHECK(current_alpha(cos, 1000) == doctest::Approx(0.9));
  CHECK(current_alpha(cos, 500) == doctest::Approx(0.5 * (0.996 + 0.9)));
  // monotone nonincreasing
  double prev = 1.0;
  for (int i = 0; i <= 1000; i += 50) {
    const double a = current_alpha(cos, i);
    CHECK(a <= prev + 1e-12);
    prev = a;
  }

  const EmaSchedule none{EmaPolicy::kNone, 0.95, 0.95, 0, 1000};
  for (int i = 0; i <= 1000; i += 100) CHECK(current_alpha(none, i) == doctest::Approx(0.95));
}

TEST_CASE("ema_update is the exact affine rule") {
  ParamVector student = random_params(2);
  TeacherState t = init_teacher(random_params(3), {EmaPolicy::kNone, 0.99, 0.99, 0, 10});
  const double before = t.params["a"][0];
  ema_update(t, student, 0);
  CHECK(t.params["a"][0] == doctest::Approx(0.99 * before + 0.01 * student["a"][0]));

  // affine coefficients sum to one: equal student is a fixed point
  TeacherState fixed = init_teacher(student, {EmaPolicy::kNone, 0.7, 0.7, 0, 10});
  ema_update(fixed, student, 0);
  CHECK(max_gap(fixed.params, student) < 1e-15);

  // iteration must advance
  CHECK_THROWS_AS(ema_update(fixed, student, 0), std::invalid_argument);
}

TEST_CASE("frozen student gap decays as alpha^k") {
  const ParamVector student = random_params(4);
  TeacherState t = init_teacher(random_params(5), {EmaPolicy::kNone, 0.9, 0.9, 0, 1000});
  const double gap0 = max_gap(t.params, student);
  for (int k = 1; k <= 40; ++k) {
    ema_update(t, student, k - 1);
    CHECK(max_gap(t.params, student) == doctest::Approx(std::pow(0.9, k) * gap0).epsilon(1e-9));
  }
}

TEST_CASE("effective averaging window") {
  // alpha = 0.9 averages roughly the past alpha/(1-alpha) = 9 steps: the
  // weight on the most recent 9 student snapshots sums to 1 - 0.9^9 ~ 0.61
  const double alpha = 0.9;
  double weight_recent = 0.0;
  for (int k = 0; k < 9; ++k) weight_recent += (1 - alpha) * std::pow(alpha, k);
  CHECK(weight_recent == doctest::Approx(1.0 - std::pow(alpha, 9)));
  CHECK(alpha / (1 - alpha) == doctest::Approx(9.0));
}

TEST_CASE("ema_update rejects shape mismatch") {
  ParamVector student = random_params(6);
  TeacherState t = init_teacher(student, {EmaPolicy::kNone, 0.9, 0.9, 0, 10});
  student["a"] = Tensor({2, 2});
  CHECK_THROWS_AS(ema_update(t, student, 0), std::invalid_argument);
}
