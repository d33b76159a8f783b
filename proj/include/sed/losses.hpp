#pragma once

#include <span>
#include <vector>

#include "sed/autodiff.hpp"
#include "sed/detector.hpp"

namespace sed {

inline constexpr double kProbEps = 1e-8;  // probability clamp inside logs

double kl_div(std::span<const double> p_target, std::span<const double> p);
double js_div(std::span<const double> p, std::span<const double> q);

// Total-variation distance 0.5 * sum |p_i - p'_i|, in [0, 1]; the per-sample
// gradient-norm statistic used for histogram re-weighting.
double grad_norm(std::span<const double> p, std::span<const double> p_target);

struct GradHistogram {
  int bins = 10;
  std::vector<int> counts;  // per bin over [0, 1]

  static GradHistogram build(std::span<const double> gs, int bins);
  int bin_of(double g) const;  // g == 1 falls in the last bin
  int total() const;
};

struct ReweightedMeanResult {
  double value = 0.0;
  bool empty_input = false;
  GradHistogram hist;
};

// (1/M) * sum_i kl[i] / R_idx(g[i]); empty input yields 0 with a warning flag.
ReweightedMeanResult reweighted_mean(std::span<const double> per_sample_kl,
                                     std::span<const double> per_sample_g, int bins);

// Per-sample aggregation weights: 1/(M * R_idx(g_i)) when re-weighting,
// 1/N otherwise.
std::vector<double> aggregation_weights(std::span<const double> gs, int bins, bool reweight);

enum class DistillMode { kSoft, kHard };

struct LossReport {
  double supervised_cls = 0, supervised_reg = 0;
  double scale_cls = 0, scale_reg = 0;
  double distill_cls = 0, distill_reg = 0;
  double multiplier = 0;  // n_u / n_s
  double lambda_scale = 0.5, lambda_distill = 1.0;
  double total = 0;

  double recompute_total() const {
    return supervised_cls + supervised_reg +
           multiplier * (lambda_scale * (scale_cls + scale_reg) +
                         lambda_distill * (distill_cls + distill_reg));
  }
};

LossReport total_loss(double sup_cls, double sup_reg, double scale_cls, double scale_reg,
                      double distill_cls, double distill_reg, int n_u, int n_s,
                      double lambda_scale, double lambda_distill);

// ---- per-output-pair raw terms (value level) -------------------------------

// Supervised targets derived from an assignment, flattened over levels.
struct SupervisedTargets {
  std::vector<int> cls;        // target class per anchor; -1 = ignore
  std::vector<bool> fg;        // foreground mask
  std::vector<BoxDelta> reg;   // encoded deltas, valid where fg
  int num_cls_anchors = 0;     // non-ignore count
  int num_fg = 0;
};

SupervisedTargets supervised_targets(const AnchorLayout& layout,
                                     const std::vector<LabeledBox>& gts,
                                     const AssignmentMap& assign, int num_classes);

std::pair<double, double> supervised_loss(const PyramidOutput& out, const AssignmentMap& assign,
                                          const std::vector<LabeledBox>& gts);

// Aligned-anchor terms of the scale-consistency pair: symmetric KL, the
// re-weighting statistic g, and the mean-per-component squared regression gap.
struct ConsistencyTerms {
  std::vector<double> kl;      // per aligned anchor (already symmetric for scale pairs)
  std::vector<double> g;
  std::vector<double> reg_sq;  // per aligned anchor, mean over the 4 components
};

// Enumerates level pairs full-level f vs down-level f-s; throws if no level
// pair aligns.
std::vector<std::pair<int, int>> aligned_level_pairs(const PyramidOutput& full,
                                                     const PyramidOutput& down, int s);

ConsistencyTerms scale_terms(const PyramidOutput& full, const PyramidOutput& down, int s);

std::pair<double, double> scale_consistency_loss(const PyramidOutput& full,
                                                 const PyramidOutput& down, int s,
                                                 bool reweight, int bins = 10);

ConsistencyTerms distill_terms_soft(const PyramidOutput& teacher, const PyramidOutput& student);

std::pair<double, double> self_distill_loss(const PyramidOutput& teacher,
                                            const PyramidOutput& student, DistillMode mode,
                                            double tau, double tau_bg, bool reweight,
                                            int bins = 10);

// ---- graph builders (training path) ----------------------------------------
// Weights are supplied by the caller so histograms can pool a whole batch.

struct LossNodes {
  ad::NodeId cls = -1;
  ad::NodeId reg = -1;
};

LossNodes supervised_loss_graph(ad::Tape& tape, const ForwardGraph& fg,
                                const SupervisedTargets& tg, double cls_norm, double reg_norm);

// Stop-gradient targets of the symmetric KL, one tensor per aligned level
// pair. Captured from the current forward values by default; the gradient
// checker captures once and replays them against perturbed parameters.
struct ScaleTargets {
  std::vector<std::shared_ptr<const Tensor>> full_probs, down_probs;
};

ScaleTargets capture_scale_targets(const ad::Tape& tape, const ForwardGraph& full,
                                   const ForwardGraph& down, int s);

// weights: one entry per aligned anchor in aligned_level_pairs order; applied
// to the symmetric KL. reg_norm multiplies the pooled squared gap.
LossNodes scale_consistency_graph(ad::Tape& tape, const ForwardGraph& full,
                                  const ForwardGraph& down, int s,
                                  std::span<const double> weights, double reg_norm,
                                  const ScaleTargets* frozen = nullptr);

LossNodes distill_soft_graph(ad::Tape& tape, const PyramidOutput& teacher,
                             const ForwardGraph& student, std::span<const double> weights,
                             double reg_norm);

// Hard-target variant: teacher foreground score >= tau trains toward the
// teacher argmax class and box; score < tau_bg trains toward background; the
// band in between is ignored.
struct HardTargets {
  std::vector<int> cls;        // per anchor, -1 = ignore
  std::vector<bool> fg;
  std::vector<BoxDelta> reg;   // teacher reg deltas where fg
  std::vector<double> g;       // grad_norm(student, one-hot target) where cls >= 0
  std::vector<double> ce;      // student CE toward the target where cls >= 0
  int num_fg = 0;
};

HardTargets hard_targets(const PyramidOutput& teacher, const PyramidOutput& student, double tau,
                         double tau_bg);

LossNodes distill_hard_graph(ad::Tape& tape, const HardTargets& tg, const ForwardGraph& student,
                             std::span<const double> weights, double reg_norm);

}  // namespace sed
