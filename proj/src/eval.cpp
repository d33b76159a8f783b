#include "sed/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sed/augment.hpp"
#include "sed/losses.hpp"

namespace sed {

namespace {

struct FlatDet {
  int scene = 0;
  int index = 0;  // original order within the scene, for deterministic ties
  double score = 0;
  Box box;
};

// Greedy matching of one class at one IoU threshold. Returns per-detection
// TP flags (dets must be pre-sorted by score descending).
std::vector<bool> greedy_match(const std::vector<FlatDet>& dets,
                               const std::vector<std::vector<Box>>& gts, double thr) {
  std::vector<std::vector<bool>> taken(gts.size());
  for (size_t s = 0; s < gts.size(); ++s) taken[s].assign(gts[s].size(), false);
  std::vector<bool> tp(dets.size(), false);
  for (size_t d = 0; d < dets.size(); ++d) {
    const auto& det = dets[d];
    double best = 0.0;
    int best_g = -1;
    const auto& scene_gts = gts[static_cast<size_t>(det.scene)];
    for (size_t g = 0; g < scene_gts.size(); ++g) {
      if (taken[static_cast<size_t>(det.scene)][g]) continue;
      const double v = iou(det.box, scene_gts[g]);
      if (v >= thr && v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      tp[d] = true;
      taken[static_cast<size_t>(det.scene)][static_cast<size_t>(best_g)] = true;
    }
  }
  return tp;
}

// Area under the all-point interpolated PR curve.
double ap_from_matches(const std::vector<bool>& tp, int num_gt) {
  if (num_gt == 0) return 0.0;
  std::vector<double> precision, recall;
  int cum_tp = 0;
  for (size_t i = 0; i < tp.size(); ++i) {
    cum_tp += tp[i] ? 1 : 0;
    precision.push_back(static_cast<double>(cum_tp) / static_cast<double>(i + 1));
    recall.push_back(static_cast<double>(cum_tp) / num_gt);
  }
  // precision envelope from the right
  for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
    precision[static_cast<size_t>(i)] =
        std::max(precision[static_cast<size_t>(i)], precision[static_cast<size_t>(i + 1)]);
  double ap = 0.0, prev_recall = 0.0;
  for (size_t i = 0; i < tp.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace

APReport compute_ap(const std::vector<std::vector<Detection>>& dets_per_scene,
                    const std::vector<std::vector<LabeledBox>>& gts_per_scene,
                    const std::vector<double>& iou_thrs) {
  if (dets_per_scene.size() != gts_per_scene.size())
    throw std::invalid_argument("compute_ap: scene count mismatch");
  int max_class = 0;
  for (const auto& scene : gts_per_scene)
    for (const auto& g : scene) max_class = std::max(max_class, g.class_id);
  for (const auto& scene : dets_per_scene)
    for (const auto& d : scene) max_class = std::max(max_class, d.class_id);
  const int num_classes = max_class + 1;

  APReport rep;
  rep.per_class_ap50.assign(static_cast<size_t>(num_classes), 0.0);
  std::vector<double> ap_sum_over_thrs(iou_thrs.size(), 0.0);
  double ar50_sum = 0, ar90_sum = 0;
  int classes_with_gt = 0;

  for (int c = 0; c < num_classes; ++c) {
    std::vector<FlatDet> dets;
    std::vector<std::vector<Box>> gts(gts_per_scene.size());
    int num_gt = 0;
    for (size_t s = 0; s < gts_per_scene.size(); ++s) {
      for (const auto& g : gts_per_scene[s])
        if (g.class_id == c) {
          gts[s].push_back(g.box);
          ++num_gt;
        }
      int idx = 0;
      for (const auto& d : dets_per_scene[s]) {
        if (d.class_id == c) dets.push_back({static_cast<int>(s), idx, d.score, d.box});
        ++idx;
      }
    }
    if (num_gt == 0) {
      if (!dets.empty()) rep.undefined_class_flag = true;  // AP contributes 0
      continue;
    }
    ++classes_with_gt;
    std::sort(dets.begin(), dets.end(), [](const FlatDet& a, const FlatDet& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.scene != b.scene) return a.scene < b.scene;
      return a.index < b.index;
    });
    for (size_t ti = 0; ti < iou_thrs.size(); ++ti) {
      const auto tp = greedy_match(dets, gts, iou_thrs[ti]);
      const double ap = ap_from_matches(tp, num_gt);
      ap_sum_over_thrs[ti] += ap;
      if (iou_thrs[ti] == 0.5) rep.per_class_ap50[static_cast<size_t>(c)] = ap;
    }
    auto recall_at = [&](double thr) {
      const auto tp = greedy_match(dets, gts, thr);
      const int matched = static_cast<int>(std::count(tp.begin(), tp.end(), true));
      return static_cast<double>(matched) / num_gt;
    };
    ar50_sum += recall_at(0.5);
    ar90_sum += recall_at(0.9);
  }

  if (classes_with_gt > 0) {
    double total = 0.0;
    for (size_t ti = 0; ti < iou_thrs.size(); ++ti) {
      const double ap = ap_sum_over_thrs[ti] / classes_with_gt;
      total += ap;
      if (iou_thrs[ti] == 0.5) rep.ap50 = ap;
      if (iou_thrs[ti] == 0.75) rep.ap75 = ap;
    }
    rep.map5095 = total / static_cast<double>(iou_thrs.size());
    rep.ar50 = ar50_sum / classes_with_gt;
    rep.ar90 = ar90_sum / classes_with_gt;
  } else {
    rep.undefined_class_flag = rep.undefined_class_flag ||
                               std::any_of(dets_per_scene.begin(), dets_per_scene.end(),
                                           [](const auto& v) { return !v.empty(); });
  }
  return rep;
}

std::vector<PseudoLabelPoint> pseudo_label_pr(const ParamVector& params, const ArchConfig& arch,
                                              const std::vector<Scene>& scenes,
                                              const std::vector<double>& score_thresholds,
                                              const std::vector<double>& iou_criteria,
                                              double nms_thr) {
  std::vector<std::vector<Detection>> dets;
  dets.reserve(scenes.size());
  int total_gt = 0;
  for (const Scene& s : scenes) {
    dets.push_back(predict_detections(params, s.image, arch, 1e-4, nms_thr));
    total_gt += static_cast<int>(s.boxes.size());
  }

  std::vector<PseudoLabelPoint> out;
  for (double thr : score_thresholds)
    for (double iou_c : iou_criteria) {
      PseudoLabelPoint pt;
      pt.score_threshold = thr;
      pt.iou_criterion = iou_c;
      int tp = 0, fp = 0;
      for (size_t s = 0; s < scenes.size(); ++s) {
        std::vector<bool> taken(scenes[s].boxes.size(), false);
        for (const Detection& d : dets[s]) {
          if (d.score < thr) continue;
          ++pt.num_pseudo_labels;
          double best = 0.0;
          int best_g = -1;
          for (size_t g = 0; g < scenes[s].boxes.size(); ++g) {
            if (taken[g] || scenes[s].boxes[g].class_id != d.class_id) continue;
            const double v = iou(d.box, scenes[s].boxes[g].box);
            if (v >= iou_c && v > best) {
              best = v;
              best_g = static_cast<int>(g);
            }
          }
          if (best_g >= 0) {
            ++tp;
            taken[static_cast<size_t>(best_g)] = true;
          } else {
            ++fp;
          }
        }
      }
      if (tp + fp > 0) {
        pt.precision = static_cast<double>(tp) / (tp + fp);
      } else {
        pt.precision = 1.0;
        pt.precision_defined = false;
      }
      pt.recall = total_gt > 0 ? static_cast<double>(tp) / total_gt : 0.0;
      out.push_back(pt);
    }
  return out;
}

std::vector<Detection> multiscale_ensemble(const ParamVector& params, const ArchConfig& arch,
                                           const Image& img, const std::vector<double>& factors,
                                           double score_thr, double nms_thr) {
  const int max_stride = 4 << (arch.num_levels - 1);
  std::vector<Detection> pool;
  for (double f : factors) {
    if (!(f > 0)) throw std::invalid_argument("multiscale_ensemble: non-positive scale factor");
    const int sh = static_cast<int>(std::lround(img.h * f));
    const int sw = static_cast<int>(std::lround(img.w * f));
    Image scaled = (sh == img.h && sw == img.w) ? img : area_resample(img, sh, sw);
    // pad bottom/right to stride-divisible dims with the mean intensity
    const int ph = (sh % max_stride == 0) ? sh : (sh / max_stride + 1) * max_stride;
    const int pw = (sw % max_stride == 0) ? sw : (sw / max_stride + 1) * max_stride;
    if (ph != sh || pw != sw) {
      Image padded(ph, pw, scaled.mean());
      for (int y = 0; y < sh; ++y)
        for (int x = 0; x < sw; ++x)
          for (int c = 0; c < 3; ++c) padded.at(y, x, c) = scaled.at(y, x, c);
      scaled = std::move(padded);
    }
    for (Detection d : predict_detections(params, scaled, arch, score_thr, nms_thr)) {
      // clip away the padding, then map back to original coordinates
      d.box.x1 = std::min(d.box.x1, static_cast<double>(sw));
      d.box.x2 = std::min(d.box.x2, static_cast<double>(sw));
      d.box.y1 = std::min(d.box.y1, static_cast<double>(sh));
      d.box.y2 = std::min(d.box.y2, static_cast<double>(sh));
      if (!(d.box.x2 > d.box.x1) || !(d.box.y2 > d.box.y1)) continue;
      const double fx = static_cast<double>(img.w) / sw, fy = static_cast<double>(img.h) / sh;
      d.box = Box(d.box.x1 * fx, d.box.y1 * fy, d.box.x2 * fx, d.box.y2 * fy);
      pool.push_back(d);
    }
  }
  return nms(pool, nms_thr);
}

ScoreDistanceHist score_distance_hist(const ParamVector& params, const ArchConfig& arch,
                                      const std::vector<Scene>& scenes, int s, int bins,
                                      double fg_iou) {
  if (bins < 1) throw std::invalid_argument("score_distance_hist: bins must be >= 1");
  ScoreDistanceHist h;
  h.bin_edges.resize(static_cast<size_t>(bins) + 1);
  for (int i = 0; i <= bins; ++i) h.bin_edges[static_cast<size_t>(i)] = static_cast<double>(i) / bins;
  h.count_fg.assign(static_cast<size_t>(bins), 0);
  h.count_bg.assign(static_cast<size_t>(bins), 0);

  double sum_all = 0, sum_fg = 0, sum_bg = 0;
  int n_fg = 0, n_bg = 0;
  for (const Scene& scene : scenes) {
    const PyramidOutput full = forward(params, scene.image, arch);
    const PyramidOutput down = forward(params, downsample(scene.image, s), arch);
    const int K = full.levels.at(0).probs.dim(1);
    for (const auto& [fi, di] : aligned_level_pairs(full, down, s)) {
      const LevelOutput& a = full.levels[static_cast<size_t>(fi)];
      const LevelOutput& b = down.levels[static_cast<size_t>(di)];
      const AnchorLevel& lv = full.layout.levels[static_cast<size_t>(fi)];
      for (int y = 0; y < a.grid_h; ++y)
        for (int x = 0; x < a.grid_w; ++x) {
          const int i = y * a.grid_w + x;
          const double sa = 1.0 - a.probs[static_cast<int64_t>(i) * K + (K - 1)];
          const double sb = 1.0 - b.probs[static_cast<int64_t>(i) * K + (K - 1)];
          const double dist = std::abs(sa - sb);
          const int bin = std::min(bins - 1, static_cast<int>(dist * bins));
          const Box ab = lv.anchor_box(y, x);
          bool fg = false;
          for (const LabeledBox& g : scene.boxes)
            if (iou(ab, g.box) >= fg_iou) {
              fg = true;
              break;
            }
          if (fg) {
            ++h.count_fg[static_cast<size_t>(bin)];
            sum_fg += dist;
            ++n_fg;
          } else {
            ++h.count_bg[static_cast<size_t>(bin)];
            sum_bg += dist;
            ++n_bg;
          }
          sum_all += dist;
        }
    }
  }
  h.total = n_fg + n_bg;
  h.mean_all = h.total > 0 ? sum_all / h.total : 0.0;
  h.mean_fg = n_fg > 0 ? sum_fg / n_fg : 0.0;
  h.mean_bg = n_bg > 0 ? sum_bg / n_bg : 0.0;
  return h;
}

std::vector<GradProfileBin> gradient_contribution_profile(const std::vector<double>& per_sample_kl,
                                                          const std::vector<double>& per_sample_g,
                                                          int bins, ProfileMode mode) {
  if (per_sample_kl.size() != per_sample_g.size())
    throw std::invalid_argument("gradient_contribution_profile: size mismatch");
  const GradHistogram hist = GradHistogram::build(per_sample_g, bins);
  std::vector<GradProfileBin> out(static_cast<size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    out[static_cast<size_t>(b)].bin_lo = static_cast<double>(b) / bins;
    out[static_cast<size_t>(b)].bin_hi = static_cast<double>(b + 1) / bins;
    out[static_cast<size_t>(b)].count = hist.counts[static_cast<size_t>(b)];
  }
  const double n = static_cast<double>(per_sample_kl.size());
  for (size_t i = 0; i < per_sample_kl.size(); ++i) {
    const int b = hist.bin_of(per_sample_g[i]);
    const int r = hist.counts[static_cast<size_t>(b)];
    out[static_cast<size_t>(b)].contribution += mode == ProfileMode::kVanilla
                                                    ? per_sample_kl[i] / n
                                                    : per_sample_kl[i] / (static_cast<double>(bins) * r);
  }
  // sum_{i in bin j} 1/R_j = count_j / R_j, computed as one ratio
  for (int b = 0; b < bins; ++b)
    if (out[static_cast<size_t>(b)].count > 0)
      out[static_cast<size_t>(b)].normalized_count =
          static_cast<double>(out[static_cast<size_t>(b)].count) / hist.counts[static_cast<size_t>(b)];
  return out;
}

}  // namespace sed
