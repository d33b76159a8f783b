#include <doctest.h>

#include "sed/gradcheck.hpp"

using namespace sed;

TEST_CASE("every loss term matches central finite differences") {
  const auto cases = run_grad_checks(/*seed=*/2, /*h=*/1e-5, /*image_size=*/32);
  REQUIRE(cases.size() == 11);
  CHECK(cases.front().param_count <= 5000);
  for (const auto& c : cases) {
    INFO(c.name, " max_rel_err=", c.max_rel_err);
    CHECK(c.max_rel_err < 1e-4);
  }
  // the composite includes every term
  bool has_composite = false;
  for (const auto& c : cases) has_composite = has_composite || c.name == "composite_weighted_sum";
  CHECK(has_composite);
}
