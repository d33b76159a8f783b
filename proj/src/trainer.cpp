#include "sed/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "sed/augment.hpp"
#include "sed/ema.hpp"
#include "sed/eval.hpp"
#include "sed/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sed {

namespace {

using nlohmann::json;

constexpr uint64_t kTagBatch = 0xB47C0ULL;
constexpr uint64_t kTagSupAug = 0x50AB1ULL;
constexpr uint64_t kTagSample = 0x5A3F4ULL;
constexpr uint64_t kTagWeak = 0x3EAC2ULL;
constexpr uint64_t kTagStrong = 0x57A03ULL;

void require_finite(double v, const char* component, int64_t iter) {
  if (!std::isfinite(v))
    throw TrainError("non-finite " + std::string(component) + " at iteration " +
                     std::to_string(iter));
}

struct LabeledWork {
  ad::Tape tape;
  ForwardGraph fg;
  SupervisedTargets targets;
  LossNodes nodes;
};

struct UnlabeledWork {
  ad::Tape tape;
  ForwardGraph fg_strong;                 // student on strong(X')
  ForwardGraph fg_down;                   // student on downsample(strong(X'), s)
  PyramidOutput teacher_out;              // teacher on X', values only
  PyramidOutput student_out, student_down;  // value copies for term extraction
  ConsistencyTerms scale_t;
  ConsistencyTerms distill_t;             // soft mode
  HardTargets hard_t;                     // hard mode
  LossNodes scale_nodes, distill_nodes;
};

PyramidOutput values_of(const ad::Tape& tape, const ForwardGraph& fg) {
  PyramidOutput out;
  out.layout = fg.layout;
  for (const auto& lv : fg.levels)
    out.levels.push_back({lv.f, lv.grid_h, lv.grid_w, tape.val(lv.probs), tape.val(lv.reg)});
  return out;
}

double node_or_zero(const ad::Tape& tape, ad::NodeId id) {
  return id >= 0 ? tape.scalar(id) : 0.0;
}

}  // namespace

void sgd_step(ad::ParamVector& params, const ad::ParamVector& grads, OptimizerState& opt,
              double momentum, double weight_decay) {
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& v = opt.momentum.at(name);
    if (!g.same_shape(p) || !v.same_shape(p))
      throw std::invalid_argument("sgd_step: shape mismatch at " + name);
    for (int64_t i = 0; i < p.size(); ++i) {
      v[i] = momentum * v[i] + (g[i] + weight_decay * p[i]);
      p[i] -= opt.lr * v[i];
    }
  }
}

TrainResult train(const RunConfig& cfg, const TrainerData& data, const std::string& out_dir,
                  bool resume) {
  cfg.validate();
  if (data.labeled.empty()) throw TrainError("train: no labeled scenes");
  const TrainConfig& tc = cfg.train;
  if (tc.batch_unlabeled > 0 && data.unlabeled.empty() && tc.burn_in_iterations < tc.iterations)
    throw TrainError("train: unlabeled batch requested but no unlabeled scenes");

  std::filesystem::create_directories(out_dir);
  const std::string metrics_path = out_dir + "/metrics.jsonl";
  const std::string latest_path = out_dir + "/checkpoint_latest.sedckpt";
  const std::string final_path = out_dir + "/checkpoint_final.sedckpt";

  // Strong-augment fill: labeled-set mean intensity unless pinned in config.
  AugmentConfig aug = cfg.augment;
  if (aug.cutout_fill < 0) {
    double m = 0.0;
    for (const Scene& s : data.labeled) m += s.image.mean();
    aug.cutout_fill = m / static_cast<double>(data.labeled.size());
  }

  ad::ParamVector params = init_params(cfg.arch, tc.master_seed);
  OptimizerState opt;
  for (const auto& [name, t] : params) opt.momentum[name] = Tensor(t.shape);
  std::optional<TeacherState> teacher;

  EmaSchedule ema_schedule = tc.ema;
  ema_schedule.total_iterations = tc.iterations;

  int64_t start_iter = 0;
  if (resume && std::filesystem::exists(latest_path)) {
    Checkpoint ck = Checkpoint::load(latest_path);
    if (!(ck.arch == cfg.arch)) throw TrainError("train: checkpoint arch differs from config");
    params = std::move(ck.student);
    if (ck.optimizer) opt.momentum = std::move(*ck.optimizer);
    if (ck.teacher) teacher = TeacherState{std::move(*ck.teacher), ema_schedule, ck.iteration - 1};
    start_iter = ck.iteration;
  }

  std::ofstream metrics(metrics_path, start_iter > 0 ? std::ios::app : std::ios::trunc);
  if (!metrics) throw TrainError("train: cannot open metrics log " + metrics_path);

  auto save_checkpoint = [&](const std::string& path, int64_t next_iter) {
    Checkpoint ck;
    ck.arch = cfg.arch;
    ck.iteration = next_iter;
    ck.student = params;
    ck.optimizer = opt.momentum;
    ck.ema = ema_schedule;
    if (teacher) ck.teacher = teacher->params;
    ck.save(path);
  };

  const int n_s = tc.batch_labeled;
  const int n_u = tc.batch_unlabeled;
  const double multiplier = static_cast<double>(n_u) / static_cast<double>(n_s);

  for (int64_t iter = start_iter; iter < tc.iterations; ++iter) {
    // step LR decay
    opt.lr = tc.lr;
    for (int m : tc.lr_milestones)
      if (iter >= m) opt.lr *= tc.lr_gamma;

    const bool unsup_on = iter >= tc.burn_in_iterations && n_u > 0;
    if (iter == tc.burn_in_iterations && n_u > 0 && !teacher)
      teacher = init_teacher(params, ema_schedule);

    const uint64_t iter_seed = Rng::mix(tc.master_seed, kTagBatch, static_cast<uint64_t>(iter));
    Rng batch_rng(iter_seed);
    std::vector<int> lab_idx(static_cast<size_t>(n_s));
    for (int& i : lab_idx) i = batch_rng.uniform_int(0, static_cast<int>(data.labeled.size()) - 1);
    std::vector<int> unl_idx(static_cast<size_t>(unsup_on ? n_u : 0));
    for (int& i : unl_idx) i = batch_rng.uniform_int(0, static_cast<int>(data.unlabeled.size()) - 1);
    const int s_draw = tc.scale_max_exponent == 1 ? 1 : batch_rng.uniform_int(1, tc.scale_max_exponent);

    // ---- phase A: forwards (parallel across batch items) ----
    std::vector<LabeledWork> lab(static_cast<size_t>(n_s));
    std::vector<UnlabeledWork> unl(unl_idx.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (int b = 0; b < n_s + static_cast<int>(unl_idx.size()); ++b) {
      if (b < n_s) {
        LabeledWork& w = lab[static_cast<size_t>(b)];
        const Scene& scene = data.labeled[static_cast<size_t>(lab_idx[static_cast<size_t>(b)])];
        Rng rng(Rng::mix(iter_seed, kTagSupAug, static_cast<uint64_t>(b)));
        const WeakAugment wa = weak_augment(scene, rng, aug);
        w.fg = forward_graph(w.tape, params, wa.image, cfg.arch);
        AssignmentMap am =
            assign_targets(w.fg.layout, wa.boxes, tc.fg_iou_threshold, tc.bg_iou_threshold);
        Rng sample_rng(Rng::mix(iter_seed, kTagSample, static_cast<uint64_t>(b)));
        am = subsample_background(am, sample_rng, tc.cls_sample_size, tc.cls_sample_fg_fraction);
        w.targets = supervised_targets(w.fg.layout, wa.boxes, am, cfg.arch.num_classes);
      } else {
        const int u = b - n_s;
        UnlabeledWork& w = unl[static_cast<size_t>(u)];
        const UnlabeledScene& scene = data.unlabeled[static_cast<size_t>(unl_idx[static_cast<size_t>(u)])];
        Rng weak_rng(Rng::mix(iter_seed, kTagWeak, static_cast<uint64_t>(u)));
        Rng strong_rng(Rng::mix(iter_seed, kTagStrong, static_cast<uint64_t>(u)));
        auto [weak_img, rec] = weak_augment_image(scene.image, weak_rng, aug);
        const Image strong_img = strong_augment(weak_img, strong_rng, aug);
        w.fg_strong = forward_graph(w.tape, params, strong_img, cfg.arch);
        w.student_out = values_of(w.tape, w.fg_strong);
        if (tc.lambda_scale != 0.0) {
          w.fg_down = forward_graph(w.tape, params, downsample(strong_img, s_draw), cfg.arch);
          w.student_down = values_of(w.tape, w.fg_down);
          w.scale_t = scale_terms(w.student_out, w.student_down, s_draw);
        }
        if (tc.lambda_distill != 0.0) {
          w.teacher_out = forward(teacher->params, weak_img, cfg.arch);
          if (tc.distill_mode == DistillMode::kSoft)
            w.distill_t = distill_terms_soft(w.teacher_out, w.student_out);
          else
            w.hard_t = hard_targets(w.teacher_out, w.student_out, tc.distill_tau, tc.distill_tau_bg);
        }
      }
    }

    // ---- phase B: batch-pooled aggregation weights ----
    int sup_cls_anchors = 0, sup_fg = 0;
    for (const LabeledWork& w : lab) {
      sup_cls_anchors += w.targets.num_cls_anchors;
      sup_fg += w.targets.num_fg;
    }
    const double sup_cls_norm = sup_cls_anchors > 0 ? 1.0 / sup_cls_anchors : 0.0;
    const double sup_reg_norm = sup_fg > 0 ? 1.0 / (4.0 * sup_fg) : 0.0;

    std::vector<double> scale_g, distill_g;
    for (const UnlabeledWork& w : unl) {
      scale_g.insert(scale_g.end(), w.scale_t.g.begin(), w.scale_t.g.end());
      if (tc.distill_mode == DistillMode::kSoft)
        distill_g.insert(distill_g.end(), w.distill_t.g.begin(), w.distill_t.g.end());
      else
        distill_g.insert(distill_g.end(), w.hard_t.g.begin(), w.hard_t.g.end());
    }
    const std::vector<double> scale_w =
        aggregation_weights(scale_g, tc.reweight_bins, tc.reweight_scale);
    const std::vector<double> distill_w =
        aggregation_weights(distill_g, tc.reweight_bins, tc.reweight_distill);
    const double scale_reg_norm = scale_g.empty() ? 0.0 : 1.0 / (4.0 * static_cast<double>(scale_g.size()));
    int distill_anchor_total = 0, distill_fg_total = 0;
    for (const UnlabeledWork& w : unl) {
      distill_anchor_total += static_cast<int>(w.distill_t.reg_sq.size());
      distill_fg_total += w.hard_t.num_fg;
    }
    const double distill_reg_norm =
        tc.distill_mode == DistillMode::kSoft
            ? (distill_anchor_total > 0 ? 1.0 / (4.0 * distill_anchor_total) : 0.0)
            : (distill_fg_total > 0 ? 1.0 / (4.0 * distill_fg_total) : 0.0);

    // ---- phase C: loss graphs + per-item backward (parallel) ----
    std::vector<size_t> scale_off(unl.size() + 1, 0), distill_off(unl.size() + 1, 0);
    for (size_t u = 0; u < unl.size(); ++u) {
      scale_off[u + 1] = scale_off[u] + unl[u].scale_t.g.size();
      distill_off[u + 1] = distill_off[u] + (tc.distill_mode == DistillMode::kSoft
                                                 ? unl[u].distill_t.g.size()
                                                 : unl[u].hard_t.g.size());
    }
    std::vector<ad::ParamVector> item_grads(lab.size() + unl.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
#endif
    for (int b = 0; b < n_s + static_cast<int>(unl.size()); ++b) {
      if (b < n_s) {
        LabeledWork& w = lab[static_cast<size_t>(b)];
        w.nodes = supervised_loss_graph(w.tape, w.fg, w.targets, sup_cls_norm, sup_reg_norm);
        const ad::NodeId loss = w.tape.add(w.nodes.cls, w.nodes.reg);
        item_grads[static_cast<size_t>(b)] = w.tape.backward(loss);
      } else {
        const size_t u = static_cast<size_t>(b - n_s);
        UnlabeledWork& w = unl[u];
        std::vector<ad::NodeId> parts;
        if (tc.lambda_scale != 0.0) {
          std::span<const double> sw(scale_w.data() + scale_off[u], scale_off[u + 1] - scale_off[u]);
          w.scale_nodes = scale_consistency_graph(w.tape, w.fg_strong, w.fg_down, s_draw, sw,
                                                  scale_reg_norm);
          parts.push_back(w.tape.scale(w.tape.add(w.scale_nodes.cls, w.scale_nodes.reg),
                                       multiplier * tc.lambda_scale));
        }
        if (tc.lambda_distill != 0.0) {
          std::span<const double> dw(distill_w.data() + distill_off[u],
                                     distill_off[u + 1] - distill_off[u]);
          if (tc.distill_mode == DistillMode::kSoft)
            w.distill_nodes = distill_soft_graph(w.tape, w.teacher_out, w.fg_strong, dw,
                                                 distill_reg_norm);
          else
            w.distill_nodes = distill_hard_graph(w.tape, w.hard_t, w.fg_strong, dw, distill_reg_norm);
          parts.push_back(w.tape.scale(w.tape.add(w.distill_nodes.cls, w.distill_nodes.reg),
                                       multiplier * tc.lambda_distill));
        }
        if (!parts.empty()) {
          item_grads[static_cast<size_t>(b)] = w.tape.backward(w.tape.add_n(parts));
        } else {
          for (const auto& [name, t] : params)
            item_grads[static_cast<size_t>(b)][name] = Tensor(t.shape);
        }
      }
    }

    // ---- phase D: deterministic reduction, step, log ----
    double sup_cls = 0, sup_reg = 0, scale_cls = 0, scale_reg = 0, distill_cls = 0, distill_reg = 0;
    for (const LabeledWork& w : lab) {
      sup_cls += node_or_zero(w.tape, w.nodes.cls);
      sup_reg += node_or_zero(w.tape, w.nodes.reg);
    }
    for (const UnlabeledWork& w : unl) {
      scale_cls += node_or_zero(w.tape, w.scale_nodes.cls);
      scale_reg += node_or_zero(w.tape, w.scale_nodes.reg);
      distill_cls += node_or_zero(w.tape, w.distill_nodes.cls);
      distill_reg += node_or_zero(w.tape, w.distill_nodes.reg);
    }
    require_finite(sup_cls, "supervised_cls", iter);
    require_finite(sup_reg, "supervised_reg", iter);
    require_finite(scale_cls, "scale_cls", iter);
    require_finite(scale_reg, "scale_reg", iter);
    require_finite(distill_cls, "distill_cls", iter);
    require_finite(distill_reg, "distill_reg", iter);
    const LossReport report = total_loss(sup_cls, sup_reg, scale_cls, scale_reg, distill_cls,
                                         distill_reg, n_u, n_s, tc.lambda_scale, tc.lambda_distill);

    ad::ParamVector grads;
    for (const auto& [name, t] : params) grads[name] = Tensor(t.shape);
    for (const ad::ParamVector& ig : item_grads)
      for (const auto& [name, gt] : ig) {
        Tensor& acc = grads.at(name);
        for (int64_t i = 0; i < acc.size(); ++i) acc[i] += gt[i];
      }
    for (const auto& [name, gt] : grads)
      if (!gt.all_finite())
        throw TrainError("non-finite gradient for " + name + " at iteration " + std::to_string(iter));

    sgd_step(params, grads, opt, tc.momentum, tc.weight_decay);
    if (teacher) ema_update(*teacher, params, iter);

    json rec = {
        {"iter", iter},
        {"lr", opt.lr},
        {"alpha", teacher ? current_alpha(ema_schedule, iter) : 0.0},
        {"total", report.total},
        {"supervised_cls", report.supervised_cls},
        {"supervised_reg", report.supervised_reg},
        {"scale_cls", report.scale_cls},
        {"scale_reg", report.scale_reg},
        {"distill_cls", report.distill_cls},
        {"distill_reg", report.distill_reg},
        {"multiplier", report.multiplier},
        {"lambda_scale", report.lambda_scale},
        {"lambda_distill", report.lambda_distill},
    };
    metrics << rec.dump() << "\n";

    if (tc.eval_interval > 0 && !data.eval_scenes.empty() &&
        ((iter + 1) % tc.eval_interval == 0 || iter + 1 == tc.iterations)) {
      std::vector<std::vector<Detection>> dets;
      std::vector<std::vector<LabeledBox>> gts;
      for (const Scene& s : data.eval_scenes) {
        dets.push_back(predict_detections(params, s.image, cfg.arch, tc.eval_score_threshold,
                                          tc.eval_nms_threshold));
        gts.push_back(s.boxes);
      }
      const APReport ap = compute_ap(dets, gts);
      json ev = {{"iter", iter}, {"eval_ap50", ap.ap50}, {"eval_ap75", ap.ap75},
                 {"eval_map", ap.map5095}, {"eval_ar50", ap.ar50}, {"eval_ar90", ap.ar90}};
      metrics << ev.dump() << "\n";
    }

    if (tc.checkpoint_interval > 0 && (iter + 1) % tc.checkpoint_interval == 0)
      save_checkpoint(latest_path, iter + 1);
  }

  metrics.flush();
  save_checkpoint(final_path, tc.iterations);
  save_checkpoint(latest_path, tc.iterations);
  return {final_path, metrics_path, tc.iterations - start_iter};
}

}  // namespace sed
