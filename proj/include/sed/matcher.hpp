#pragma once

#include <utility>
#include <vector>

#include "sed/geometry.hpp"

namespace sed {

struct PredItem {
  std::vector<double> probs;  // class distribution
  Box box;
};

struct CostMatrix {
  int rows = 0, cols = 0;
  std::vector<double> c;

  double& at(int i, int j) { return c[static_cast<size_t>(i) * cols + j]; }
  double at(int i, int j) const { return c[static_cast<size_t>(i) * cols + j]; }
};

// cost[i][j] = JS(p_i, p_j) + lambda_iou * (1 - giou(b_i, b_j))
CostMatrix pairwise_cost(const std::vector<PredItem>& preds1, const std::vector<PredItem>& preds2,
                         double lambda_iou);

// Exact minimum-cost assignment (Kuhn-Munkres with potentials). Rectangular
// matrices are padded internally with a large finite sentinel; sentinel pairs
// are stripped. Output sorted by row index.
std::vector<std::pair<int, int>> solve_assignment(const CostMatrix& cost);

std::vector<std::pair<int, int>> match_predictions(const std::vector<PredItem>& preds1,
                                                   const std::vector<PredItem>& preds2,
                                                   double lambda_iou);

double assignment_total_cost(const CostMatrix& cost, const std::vector<std::pair<int, int>>& pairs);

}  // namespace sed
