#include "sed/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "sed/losses.hpp"

namespace sed {

CostMatrix pairwise_cost(const std::vector<PredItem>& preds1, const std::vector<PredItem>& preds2,
                         double lambda_iou) {
  if (preds1.empty() || preds2.empty()) throw std::invalid_argument("pairwise_cost: empty prediction set");
  CostMatrix m;
  m.rows = static_cast<int>(preds1.size());
  m.cols = static_cast<int>(preds2.size());
  m.c.resize(static_cast<size_t>(m.rows) * m.cols);
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j)
      m.at(i, j) = js_div(preds1[static_cast<size_t>(i)].probs, preds2[static_cast<size_t>(j)].probs) +
                   lambda_iou * (1.0 - giou(preds1[static_cast<size_t>(i)].box,
                                            preds2[static_cast<size_t>(j)].box));
  return m;
}

std::vector<std::pair<int, int>> solve_assignment(const CostMatrix& cost) {
  if (cost.rows < 1 || cost.cols < 1) throw std::invalid_argument("solve_assignment: empty matrix");
  for (double v : cost.c)
    if (!std::isfinite(v)) throw std::invalid_argument("solve_assignment: non-finite cost entry");

  // Pad to square; the sentinel exceeds any achievable real total so padded
  // cells never displace a real pairing.
  const int n = std::max(cost.rows, cost.cols);
  double maxabs = 1.0;
  for (double v : cost.c) maxabs = std::max(maxabs, std::abs(v));
  const double sentinel = maxabs * (n + 1) * 4.0;
  std::vector<double> a(static_cast<size_t>(n) * n, sentinel);
  for (int i = 0; i < cost.rows; ++i)
    for (int j = 0; j < cost.cols; ++j) a[static_cast<size_t>(i) * n + j] = cost.at(i, j);

  // Kuhn-Munkres with row/column potentials, 1-based internal indexing.
  const double INF = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
  std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, INF);
    std::vector<bool> used(static_cast<size_t>(n) + 1, false);
    do {
      used[static_cast<size_t>(j0)] = true;
      const int i0 = p[static_cast<size_t>(j0)];
      double delta = INF;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = a[static_cast<size_t>(i0 - 1) * n + (j - 1)] - u[static_cast<size_t>(i0)] -
                           v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }

  std::vector<std::pair<int, int>> pairs;
  for (int j = 1; j <= n; ++j) {
    const int i = p[static_cast<size_t>(j)];
    if (i >= 1 && i <= cost.rows && j <= cost.cols) pairs.emplace_back(i - 1, j - 1);
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

std::vector<std::pair<int, int>> match_predictions(const std::vector<PredItem>& preds1,
                                                   const std::vector<PredItem>& preds2,
                                                   double lambda_iou) {
  return solve_assignment(pairwise_cost(preds1, preds2, lambda_iou));
}

double assignment_total_cost(const CostMatrix& cost,
                             const std::vector<std::pair<int, int>>& pairs) {
  double s = 0.0;
  for (const auto& [i, j] : pairs) s += cost.at(i, j);
  return s;
}

}  // namespace sed
