#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "sed/tensor.hpp"

namespace sed::ad {

using NodeId = int32_t;

// Named parameter collection. std::map keeps iteration order deterministic.
using ParamVector = std::map<std::string, Tensor>;

int64_t param_count(const ParamVector& p);
bool params_all_finite(const ParamVector& p);

enum class Op : uint8_t {
  Const,
  Param,
  StopGrad,
  Conv2d,     // in: x [Cin,H,W], w [Cout,Cin,kh,kw], b [Cout]; attrs i0=stride, i1=pad
  Relu,
  Add,
  Sub,
  Mul,
  Scale,      // c0 * x
  AddN,       // elementwise sum of same-shaped inputs
  SoftmaxRows,  // [N,K] softmax over K
  LogClamped,   // ln(max(x, c0))
  Square,
  SumAll,          // -> scalar
  WeightedSumAll,  // sum_i weights[i] * flat[i] -> scalar
  KlRows,   // sum_i w[i] * sum_k t[i,k]*(ln t[i,k] - ln max(p[i,k], c0)); target frozen
  CeRows,   // sum_i w[i] * (-ln max(p[i, cls[i]], c0)); cls[i] < 0 skips the row
  L2Rows,   // sum_i w[i] * sum_k (x[i,k] - t[i,k])^2; target frozen
  ChwToRows,  // [C,H,W] -> [H*W*A, K] taking channels [i2, i2 + i0*i1); i0=A, i1=K
};

struct Node {
  Op op;
  std::vector<NodeId> in;
  Tensor val;
  Tensor grad;  // allocated on demand during backward
  bool needs_grad = false;
  bool grad_live = false;

  int i0 = 0, i1 = 0, i2 = 0;
  double c0 = 0.0;
  std::shared_ptr<const Tensor> target;             // KlRows / L2Rows frozen targets
  std::shared_ptr<const std::vector<double>> wrow;  // row weights / flat weights
  std::shared_ptr<const std::vector<int>> cls;      // CeRows class indices
  std::string pname;                                // Param only
};

// Single-use computation tape. One tape per image per step; parameters are
// bound by name so gradients from several tapes can be reduced outside.
class Tape {
 public:
  NodeId constant(Tensor v);
  // Binds (and caches) a parameter node; repeated calls with one name return
  // the same node.
  NodeId param(const std::string& name, const Tensor& value);

  NodeId stop_grad(NodeId x);
  NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
  NodeId relu(NodeId x);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId x, double c);
  NodeId add_n(const std::vector<NodeId>& xs);
  NodeId softmax_rows(NodeId logits);
  NodeId log_clamped(NodeId x, double eps);
  NodeId square(NodeId x);
  NodeId sum_all(NodeId x);
  NodeId weighted_sum_all(NodeId x, std::shared_ptr<const std::vector<double>> w);
  NodeId kl_rows(NodeId probs, std::shared_ptr<const Tensor> target,
                 std::shared_ptr<const std::vector<double>> row_w, double eps);
  NodeId ce_rows(NodeId probs, std::shared_ptr<const std::vector<int>> cls,
                 std::shared_ptr<const std::vector<double>> row_w, double eps);
  NodeId l2_rows(NodeId x, std::shared_ptr<const Tensor> target,
                 std::shared_ptr<const std::vector<double>> row_w);
  NodeId chw_to_rows(NodeId x, int anchors, int cols, int channel_offset);

  const Tensor& val(NodeId id) const { return nodes_[static_cast<size_t>(id)].val; }
  double scalar(NodeId id) const;

  // Reverse pass from a scalar loss. Returns d(loss)/d(param) for every bound
  // parameter. Throws if the loss value is non-finite.
  ParamVector backward(NodeId loss);

  size_t num_nodes() const { return nodes_.size(); }

 private:
  NodeId push(Node n);
  Node& at(NodeId id) { return nodes_[static_cast<size_t>(id)]; }
  Tensor& grad_buf(NodeId id);

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> param_nodes_;
};

// Central finite differences of `f` at `p`, compared against `analytic`.
// Returns the max relative error over all coordinates, with denominators
// floored at `denom_floor` so dead directions do not inflate the ratio.
double finite_diff_max_rel_err(const ParamVector& p,
                               const std::function<double(const ParamVector&)>& f,
                               const ParamVector& analytic, double h = 1e-5,
                               double denom_floor = 1e-6);

}  // namespace sed::ad
