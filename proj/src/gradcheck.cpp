#include "sed/gradcheck.hpp"

#include <cmath>
#include <memory>

#include "sed/augment.hpp"
#include "sed/detector.hpp"
#include "sed/losses.hpp"
#include "sed/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace sed {

namespace {

using ad::ParamVector;
using ad::Tape;

// FD evaluation parallelized over coordinates; f must be pure.
double fd_max_rel_err(const ParamVector& p0, const std::function<double(const ParamVector&)>& f,
                      const ParamVector& analytic, double h) {
  std::vector<std::pair<std::string, int64_t>> coords;
  for (const auto& [name, t] : p0)
    for (int64_t i = 0; i < t.size(); ++i) coords.emplace_back(name, i);
  std::vector<double> errs(coords.size(), 0.0);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 64)
#endif
  for (int64_t ci = 0; ci < static_cast<int64_t>(coords.size()); ++ci) {
    const auto& [name, i] = coords[static_cast<size_t>(ci)];
    ParamVector w = p0;
    const double orig = w.at(name)[i];
    w.at(name)[i] = orig + h;
    const double fp = f(w);
    w.at(name)[i] = orig - h;
    const double fm = f(w);
    const double fd = (fp - fm) / (2.0 * h);
    const double ga = analytic.at(name)[i];
    errs[static_cast<size_t>(ci)] = std::abs(fd - ga) / std::max({1e-6, std::abs(fd), std::abs(ga)});
  }
  double worst = 0.0;
  for (double e : errs) worst = std::max(worst, e);
  return worst;
}

struct Scenario {
  ArchConfig arch;
  ParamVector params;
  ParamVector teacher_params;
  Image labeled_img, strong_img, down_img, weak_img;
  std::vector<LabeledBox> gts;
  int s = 1;
};

Scenario make_scenario(uint64_t seed, int image_size) {
  Scenario sc;
  sc.arch = ArchConfig{6, 10, 10};
  sc.params = init_params(sc.arch, seed);

  // teacher: a weight-space mixture so its outputs differ from the student's
  const ParamVector other = init_params(sc.arch, Rng::mix(seed, 77));
  sc.teacher_params = sc.params;
  for (auto& [name, t] : sc.teacher_params) {
    const Tensor& o = other.at(name);
    for (int64_t i = 0; i < t.size(); ++i) t[i] = 0.6 * t[i] + 0.4 * o[i];
  }

  DatasetConfig dc;
  dc.image_size = image_size;
  dc.min_object_size = 6.0;
  dc.max_object_size = image_size / 2.0;
  dc.max_objects = 2;
  dc.master_seed = seed;

  const Scene labeled = generate_scene(Rng::mix(seed, 1), dc);
  sc.labeled_img = labeled.image;
  sc.gts = labeled.boxes;

  const Scene unlabeled = generate_scene(Rng::mix(seed, 2), dc);
  sc.weak_img = unlabeled.image;
  AugmentConfig aug;
  aug.cutout_fill = 0.5;
  Rng srng(Rng::mix(seed, 3));
  sc.strong_img = strong_augment(sc.weak_img, srng, aug);
  sc.down_img = downsample(sc.strong_img, sc.s);
  return sc;
}

struct FrozenState {
  SupervisedTargets sup_targets;
  double sup_cls_norm = 0, sup_reg_norm = 0;
  ScaleTargets scale_targets;  // sg side of Eq. 2, frozen at the base point
  std::vector<double> scale_w_vanilla, scale_w_reweight;
  double scale_reg_norm = 0;
  PyramidOutput teacher_out;
  std::vector<double> distill_w_vanilla, distill_w_reweight;
  double distill_reg_norm = 0;
  HardTargets hard;
  std::vector<double> hard_w;
  double hard_reg_norm = 0;
};

FrozenState freeze(const Scenario& sc, int bins) {
  FrozenState fz;
  const PyramidOutput sup_out = forward(sc.params, sc.labeled_img, sc.arch);
  const AssignmentMap am = assign_targets(sup_out.layout, sc.gts);
  fz.sup_targets = supervised_targets(sup_out.layout, sc.gts, am, sc.arch.num_classes);
  fz.sup_cls_norm = fz.sup_targets.num_cls_anchors > 0 ? 1.0 / fz.sup_targets.num_cls_anchors : 0.0;
  fz.sup_reg_norm = fz.sup_targets.num_fg > 0 ? 1.0 / (4.0 * fz.sup_targets.num_fg) : 0.0;

  const PyramidOutput full = forward(sc.params, sc.strong_img, sc.arch);
  const PyramidOutput down = forward(sc.params, sc.down_img, sc.arch);
  {
    Tape t0;
    const ForwardGraph fg_full = forward_graph(t0, sc.params, sc.strong_img, sc.arch);
    const ForwardGraph fg_down = forward_graph(t0, sc.params, sc.down_img, sc.arch);
    fz.scale_targets = capture_scale_targets(t0, fg_full, fg_down, sc.s);
  }
  const ConsistencyTerms st = scale_terms(full, down, sc.s);
  fz.scale_w_vanilla = aggregation_weights(st.g, bins, false);
  fz.scale_w_reweight = aggregation_weights(st.g, bins, true);
  fz.scale_reg_norm = 1.0 / (4.0 * static_cast<double>(st.g.size()));

  fz.teacher_out = forward(sc.teacher_params, sc.weak_img, sc.arch);
  const ConsistencyTerms dt = distill_terms_soft(fz.teacher_out, full);
  fz.distill_w_vanilla = aggregation_weights(dt.g, bins, false);
  fz.distill_w_reweight = aggregation_weights(dt.g, bins, true);
  fz.distill_reg_norm = 1.0 / (4.0 * static_cast<double>(dt.g.size()));

  fz.hard = hard_targets(fz.teacher_out, full, 0.7, 0.3);
  fz.hard_w = aggregation_weights(fz.hard.g, bins, true);
  fz.hard_reg_norm = fz.hard.num_fg > 0 ? 1.0 / (4.0 * fz.hard.num_fg) : 0.0;
  return fz;
}

}  // namespace

std::vector<GradCheckCase> run_grad_checks(uint64_t seed, double h, int image_size) {
  const int bins = 10;
  const Scenario sc = make_scenario(seed, image_size);
  const FrozenState fz = freeze(sc, bins);

  // Builders return the requested scalar node on a fresh tape.
  enum class Term {
    kSupCls, kSupReg,
    kScaleClsVanilla, kScaleClsReweight, kScaleReg,
    kDistillClsVanilla, kDistillClsReweight, kDistillReg,
    kHardCls, kHardReg,
    kComposite,
  };

  auto build = [&](Tape& tape, const ParamVector& p, Term term) -> ad::NodeId {
    auto sup = [&] {
      const ForwardGraph fg = forward_graph(tape, p, sc.labeled_img, sc.arch);
      return supervised_loss_graph(tape, fg, fz.sup_targets, fz.sup_cls_norm, fz.sup_reg_norm);
    };
    auto scale = [&](const std::vector<double>& w) {
      const ForwardGraph full = forward_graph(tape, p, sc.strong_img, sc.arch);
      const ForwardGraph down = forward_graph(tape, p, sc.down_img, sc.arch);
      return scale_consistency_graph(tape, full, down, sc.s, w, fz.scale_reg_norm, &fz.scale_targets);
    };
    auto distill = [&](const std::vector<double>& w) {
      const ForwardGraph full = forward_graph(tape, p, sc.strong_img, sc.arch);
      return distill_soft_graph(tape, fz.teacher_out, full, w, fz.distill_reg_norm);
    };
    auto hard = [&] {
      const ForwardGraph full = forward_graph(tape, p, sc.strong_img, sc.arch);
      return distill_hard_graph(tape, fz.hard, full, fz.hard_w, fz.hard_reg_norm);
    };
    switch (term) {
      case Term::kSupCls: return sup().cls;
      case Term::kSupReg: return sup().reg;
      case Term::kScaleClsVanilla: return scale(fz.scale_w_vanilla).cls;
      case Term::kScaleClsReweight: return scale(fz.scale_w_reweight).cls;
      case Term::kScaleReg: return scale(fz.scale_w_vanilla).reg;
      case Term::kDistillClsVanilla: return distill(fz.distill_w_vanilla).cls;
      case Term::kDistillClsReweight: return distill(fz.distill_w_reweight).cls;
      case Term::kDistillReg: return distill(fz.distill_w_vanilla).reg;
      case Term::kHardCls: return hard().cls;
      case Term::kHardReg: return hard().reg;
      case Term::kComposite: {
        const LossNodes sup_n = sup();
        // one student forward shared by both unsupervised terms
        const ForwardGraph full = forward_graph(tape, p, sc.strong_img, sc.arch);
        const ForwardGraph down = forward_graph(tape, p, sc.down_img, sc.arch);
        const LossNodes sc_n =
            scale_consistency_graph(tape, full, down, sc.s, fz.scale_w_reweight, fz.scale_reg_norm, &fz.scale_targets);
        const LossNodes di_n =
            distill_soft_graph(tape, fz.teacher_out, full, fz.distill_w_reweight, fz.distill_reg_norm);
        const double mult = 1.0;  // n_u == n_s in this scenario
        return tape.add(
            tape.add(sup_n.cls, sup_n.reg),
            tape.add(tape.scale(tape.add(sc_n.cls, sc_n.reg), mult * 0.5),
                     tape.scale(tape.add(di_n.cls, di_n.reg), mult * 1.0)));
      }
    }
    return -1;
  };

  const std::vector<std::pair<std::string, Term>> cases = {
      {"supervised_cls", Term::kSupCls},
      {"supervised_reg", Term::kSupReg},
      {"scale_cls", Term::kScaleClsVanilla},
      {"scale_cls_reweighted", Term::kScaleClsReweight},
      {"scale_reg", Term::kScaleReg},
      {"distill_cls_soft", Term::kDistillClsVanilla},
      {"distill_cls_soft_reweighted", Term::kDistillClsReweight},
      {"distill_reg_soft", Term::kDistillReg},
      {"distill_cls_hard", Term::kHardCls},
      {"distill_reg_hard", Term::kHardReg},
      {"composite_weighted_sum", Term::kComposite},
  };

  std::vector<GradCheckCase> out;
  for (const auto& [name, term] : cases) {
    Tape tape;
    const ad::NodeId loss = build(tape, sc.params, term);
    const double value = tape.scalar(loss);
    const ParamVector analytic = tape.backward(loss);
    auto f = [&](const ParamVector& p) {
      Tape t2;
      return t2.scalar(build(t2, p, term));
    };
    GradCheckCase c;
    c.name = name;
    c.loss_value = value;
    c.param_count = ad::param_count(sc.params);
    c.max_rel_err = fd_max_rel_err(sc.params, f, analytic, h);
    out.push_back(c);
  }
  return out;
}

}  // namespace sed
