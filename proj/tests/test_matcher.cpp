#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sed/losses.hpp"
#include "sed/matcher.hpp"
#include "sed/rng.hpp"

using namespace sed;

namespace {

// Exhaustive permutation minimum for n rows <= m cols.
double brute_force_min_cost(const CostMatrix& c) {
  const int n = std::min(c.rows, c.cols);
  std::vector<int> idx(static_cast<size_t>(std::max(c.rows, c.cols)));
  std::iota(idx.begin(), idx.end(), 0);
  double best = 1e300;
  if (c.rows <= c.cols) {
    std::vector<int> cols(static_cast<size_t>(c.cols));
    std::iota(cols.begin(), cols.end(), 0);
    do {
      double s = 0;
      for (int i = 0; i < n; ++i) s += c.at(i, cols[static_cast<size_t>(i)]);
      best = std::min(best, s);
    } while (std::next_permutation(cols.begin(), cols.end()));
  } else {
    std::vector<int> rows(static_cast<size_t>(c.rows));
    std::iota(rows.begin(), rows.end(), 0);
    do {
      double s = 0;
      for (int j = 0; j < n; ++j) s += c.at(rows[static_cast<size_t>(j)], j);
      best = std::min(best, s);
    } while (std::next_permutation(rows.begin(), rows.end()));
  }
  return best;
}

CostMatrix random_matrix(Rng& rng, int rows, int cols, double lo = 0.0, double hi = 10.0) {
  CostMatrix c;
  c.rows = rows;
  c.cols = cols;
  c.c.resize(static_cast<size_t>(rows) * cols);
  for (double& v : c.c) v = rng.uniform(lo, hi);
  return c;
}

std::vector<PredItem> random_preds(Rng& rng, int n, int k = 3) {
  std::vector<PredItem> out;
  for (int i = 0; i < n; ++i) {
    PredItem p;
    double s = 0;
    for (int j = 0; j < k; ++j) {
      p.probs.push_back(rng.uniform(0.05, 1.0));
      s += p.probs.back();
    }
    for (double& v : p.probs) v /= s;
    const double x1 = rng.uniform(0, 50), y1 = rng.uniform(0, 50);
    p.box = Box(x1, y1, x1 + rng.uniform(2, 30), y1 + rng.uniform(2, 30));
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TEST_CASE("solve_assignment trivial cases") {
  CostMatrix one;
  one.rows = one.cols = 1;
  one.c = {3.5};
  const auto p1 = solve_assignment(one);
  REQUIRE(p1.size() == 1);
  CHECK(p1[0] == std::pair<int, int>(0, 0));

  CostMatrix two;
  two.rows = two.cols = 2;
  two.c = {1, 2, 3, 1};
  const auto p2 = solve_assignment(two);
  CHECK(assignment_total_cost(two, p2) == doctest::Approx(2.0));
  CHECK(p2 == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});

  // diagonal-zero matrix -> identity assignment
  CostMatrix diag;
  diag.rows = diag.cols = 4;
  diag.c.assign(16, 5.0);
  for (int i = 0; i < 4; ++i) diag.c[static_cast<size_t>(i) * 4 + i] = 0.0;
  const auto p3 = solve_assignment(diag);
  for (int i = 0; i < 4; ++i) CHECK(p3[static_cast<size_t>(i)] == std::pair<int, int>(i, i));

  CostMatrix bad = diag;
  bad.c[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(solve_assignment(bad), std::invalid_argument);
}

TEST_CASE("solve_assignment equals brute force, square n=2..7") {
  Rng rng(11);
  for (int n = 2; n <= 7; ++n)
    for (int trial = 0; trial < 60; ++trial) {
      const CostMatrix c = random_matrix(rng, n, n, trial % 3 == 0 ? -5.0 : 0.0, 10.0);
      const auto pairs = solve_assignment(c);
      CHECK(pairs.size() == static_cast<size_t>(n));
      CHECK(assignment_total_cost(c, pairs) == doctest::Approx(brute_force_min_cost(c)).epsilon(1e-10));
    }
}

TEST_CASE("solve_assignment rectangular") {
  Rng rng(13);
  for (int trial = 0; trial < 40; ++trial) {
    const int rows = rng.uniform_int(2, 5), cols = rng.uniform_int(2, 5);
    const CostMatrix c = random_matrix(rng, rows, cols);
    const auto pairs = solve_assignment(c);
    CHECK(pairs.size() == static_cast<size_t>(std::min(rows, cols)));
    // partial bijection
    std::vector<bool> ru(static_cast<size_t>(rows), false), cu(static_cast<size_t>(cols), false);
    for (const auto& [i, j] : pairs) {
      CHECK(!ru[static_cast<size_t>(i)]);
      CHECK(!cu[static_cast<size_t>(j)]);
      ru[static_cast<size_t>(i)] = cu[static_cast<size_t>(j)] = true;
    }
    CHECK(assignment_total_cost(c, pairs) == doctest::Approx(brute_force_min_cost(c)).epsilon(1e-10));
  }
}

TEST_CASE("pairwise_cost structure") {
  Rng rng(17);
  const auto preds = random_preds(rng, 4);
  const CostMatrix self = pairwise_cost(preds, preds, 1.0);
  for (int i = 0; i < 4; ++i) CHECK(self.at(i, i) == doctest::Approx(0.0));

  // lambda = 0 reduces to the pure JS matrix
  const auto a = random_preds(rng, 3), b = random_preds(rng, 5);
  const CostMatrix js_only = pairwise_cost(a, b, 0.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(js_only.at(i, j) == doctest::Approx(js_div(a[static_cast<size_t>(i)].probs,
                                                       b[static_cast<size_t>(j)].probs)));

  // single pair, orthogonal one-hots, identical boxes, lambda 1 -> ln 2
  PredItem p1{{1, 0}, Box(0, 0, 4, 4)}, p2{{0, 1}, Box(0, 0, 4, 4)};
  const CostMatrix single = pairwise_cost({p1}, {p2}, 1.0);
  CHECK(single.at(0, 0) == doctest::Approx(std::log(2.0)));

  // cost symmetry under swapping the sets
  const CostMatrix ab = pairwise_cost(a, b, 1.0), ba = pairwise_cost(b, a, 1.0);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j) CHECK(ab.at(i, j) == doctest::Approx(ba.at(j, i)));

  CHECK_THROWS_AS(pairwise_cost({}, {p2}, 1.0), std::invalid_argument);
  PredItem bad{{0.9, 0.3}, Box(0, 0, 4, 4)};
  CHECK_THROWS_AS(pairwise_cost({bad}, {p2}, 1.0), std::invalid_argument);
}

TEST_CASE("match_predictions recovers a permutation") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    const auto preds = random_preds(rng, 5);
    std::vector<int> perm = {3, 1, 4, 0, 2};
    std::vector<PredItem> shuffled(5);
    for (int i = 0; i < 5; ++i) shuffled[static_cast<size_t>(perm[static_cast<size_t>(i)])] = preds[static_cast<size_t>(i)];
    const auto pairs = match_predictions(preds, shuffled, 1.0);
    for (const auto& [i, j] : pairs) CHECK(j == perm[static_cast<size_t>(i)]);
  }

  // identical sets -> identity matching
  const auto preds = random_preds(rng, 4);
  for (const auto& [i, j] : match_predictions(preds, preds, 1.0)) CHECK(i == j);
}

TEST_CASE("matched total invariant under consistent reordering") {
  Rng rng(23);
  const auto a = random_preds(rng, 5), b = random_preds(rng, 5);
  const CostMatrix c0 = pairwise_cost(a, b, 1.0);
  const double t0 = assignment_total_cost(c0, solve_assignment(c0));

  std::vector<int> perm = {4, 2, 0, 3, 1};
  std::vector<PredItem> a2(5), b2(5);
  for (int i = 0; i < 5; ++i) {
    a2[static_cast<size_t>(perm[static_cast<size_t>(i)])] = a[static_cast<size_t>(i)];
    b2[static_cast<size_t>(perm[static_cast<size_t>(i)])] = b[static_cast<size_t>(i)];
  }
  const CostMatrix c1 = pairwise_cost(a2, b2, 1.0);
  CHECK(assignment_total_cost(c1, solve_assignment(c1)) == doctest::Approx(t0));
  CHECK(t0 == doctest::Approx(brute_force_min_cost(c0)).epsilon(1e-10));
}
