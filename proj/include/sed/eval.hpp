#pragma once

#include <vector>

#include "sed/detector.hpp"
#include "sed/geometry.hpp"
#include "sed/synthdata.hpp"

namespace sed {

struct APReport {
  double ap50 = 0, ap75 = 0, map5095 = 0;
  double ar50 = 0, ar90 = 0;
  std::vector<double> per_class_ap50;
  bool undefined_class_flag = false;  // a class had detections but no gt

};

// COCO-style evaluation: score-descending greedy matching (one detection per
// gt, highest IoU first) and all-point interpolated PR areas, averaged over
// classes with ground truth.
APReport compute_ap(const std::vector<std::vector<Detection>>& dets_per_scene,
                    const std::vector<std::vector<LabeledBox>>& gts_per_scene,
                    const std::vector<double>& iou_thrs = {0.50, 0.55, 0.60, 0.65, 0.70, 0.75,
                                                           0.80, 0.85, 0.90, 0.95});

// Precision/recall of thresholded (hard) pseudo-labels at a fixed IoU.
struct PseudoLabelPoint {
  double score_threshold = 0;
  double iou_criterion = 0;
  double precision = 1.0;  // undefined-as-1 when no predictions survive
  double recall = 0;
  int num_pseudo_labels = 0;
  bool precision_defined = true;
};

std::vector<PseudoLabelPoint> pseudo_label_pr(const ParamVector& params, const ArchConfig& arch,
                                              const std::vector<Scene>& scenes,
                                              const std::vector<double>& score_thresholds,
                                              const std::vector<double>& iou_criteria = {0.5, 0.9},
                                              double nms_thr = 0.5);

// Inference at several image scales, boxes mapped back to original
// coordinates, fused by class-wise NMS.
std::vector<Detection> multiscale_ensemble(const ParamVector& params, const ArchConfig& arch,
                                           const Image& img, const std::vector<double>& factors,
                                           double score_thr, double nms_thr);

// Histogram of |foreground-score difference| between aligned anchors of the
// full and 1/2^s forward passes, stratified by gt overlap of the anchor.
struct ScoreDistanceHist {
  std::vector<double> bin_edges;  // bins+1 edges over [0, 1]
  std::vector<int> count_fg;
  std::vector<int> count_bg;
  double mean_all = 0, mean_fg = 0, mean_bg = 0;
  int total = 0;
};

ScoreDistanceHist score_distance_hist(const ParamVector& params, const ArchConfig& arch,
                                      const std::vector<Scene>& scenes, int s, int bins,
                                      double fg_iou = 0.5);

// Per-bin gradient contribution curves (vanilla vs re-weighted aggregation).
struct GradProfileBin {
  double bin_lo = 0, bin_hi = 0;
  int count = 0;
  double contribution = 0;
  double normalized_count = 0;  // count / R_j; exactly 1 for occupied bins
};

enum class ProfileMode { kVanilla, kReweighted };

std::vector<GradProfileBin> gradient_contribution_profile(const std::vector<double>& per_sample_kl,
                                                          const std::vector<double>& per_sample_g,
                                                          int bins, ProfileMode mode);

}  // namespace sed
