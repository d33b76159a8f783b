#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <cmath>

#include "sed/augment.hpp"
#include "sed/eval.hpp"
#include "sed/losses.hpp"
#include "sed/rng.hpp"

using namespace sed;

namespace {

// Brute-force AP reference: for every prefix of the score-sorted detection
// list, rerun greedy matching from scratch, then integrate the precision
// envelope over recall explicitly.
double ap_reference(std::vector<Detection> dets, std::vector<LabeledBox> gts, double thr) {
  int num_gt = 0;
  for (const auto& g : gts) ++num_gt;
  if (num_gt == 0) return 0.0;
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<double> precisions, recalls;
  for (size_t k = 1; k <= dets.size(); ++k) {
    std::vector<bool> taken(gts.size(), false);
    int tp = 0;
    for (size_t d = 0; d < k; ++d) {
      double best = 0;
      int bg = -1;
      for (size_t g = 0; g < gts.size(); ++g) {
        if (taken[g] || gts[g].class_id != dets[d].class_id) continue;
        const double v = iou(dets[d].box, gts[g].box);
        if (v >= thr && v > best) {
          best = v;
          bg = static_cast<int>(g);
        }
      }
      if (bg >= 0) {
        taken[static_cast<size_t>(bg)] = true;
        ++tp;
      }
    }
    precisions.push_back(static_cast<double>(tp) / static_cast<double>(k));
    recalls.push_back(static_cast<double>(tp) / num_gt);
  }
  double ap = 0;
  for (size_t i = 0; i < precisions.size(); ++i) {
    const double r_prev = i == 0 ? 0.0 : recalls[i - 1];
    if (recalls[i] <= r_prev) continue;
    double pmax = 0;
    for (size_t j = i; j < precisions.size(); ++j)
      if (recalls[j] >= recalls[i]) pmax = std::max(pmax, precisions[j]);
    ap += (recalls[i] - r_prev) * pmax;
  }
  return ap;
}

DatasetConfig scene_cfg() {
  DatasetConfig c;
  c.image_size = 64;
  c.min_object_size = 6;
  c.max_object_size = 40;
  return c;
}

}  // namespace

TEST_CASE("compute_ap trivial endpoints") {
  std::vector<std::vector<LabeledBox>> gts = {{{Box(0, 0, 10, 10), 0}, {Box(20, 20, 30, 30), 1}}};

  SUBCASE("perfect detections") {
    std::vector<std::vector<Detection>> dets = {
        {{Box(0, 0, 10, 10), 0, 1.0}, {Box(20, 20, 30, 30), 1, 1.0}}};
    const APReport r = compute_ap(dets, gts);
    CHECK(r.ap50 == doctest::Approx(1.0));
    CHECK(r.map5095 == doctest::Approx(1.0));
    CHECK(r.ar50 == doctest::Approx(1.0));
    CHECK(r.ar90 == doctest::Approx(1.0));
  }

  SUBCASE("no detections") {
    std::vector<std::vector<Detection>> dets = {{}};
    const APReport r = compute_ap(dets, gts);
    CHECK(r.ap50 == 0.0);
    CHECK(r.ar50 == 0.0);
  }

  SUBCASE("one gt, matching det at 0.9 plus disjoint false positive at 0.95") {
    std::vector<std::vector<LabeledBox>> g1 = {{{Box(0, 0, 10, 10), 0}}};
    std::vector<std::vector<Detection>> dets = {
        {{Box(40, 40, 50, 50), 0, 0.95}, {Box(0, 0, 10, 10), 0, 0.9}}};
    const APReport r = compute_ap(dets, g1);
    CHECK(r.ap50 == doctest::Approx(0.5));
  }
}

TEST_CASE("compute_ap equals brute-force reference on random micro-scenes") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<LabeledBox> gts;
    const int ng = rng.uniform_int(1, 5);
    for (int i = 0; i < ng; ++i) {
      const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
      gts.push_back({Box(x, y, x + rng.uniform(4, 20), y + rng.uniform(4, 20)),
                     rng.uniform_int(0, 1)});
    }
    std::vector<Detection> dets;
    const int nd = rng.uniform_int(0, 8);
    for (int i = 0; i < nd; ++i) {
      // mix of perturbed gts and noise
      if (rng.bernoulli(0.6) && !gts.empty()) {
        const LabeledBox& g = gts[static_cast<size_t>(rng.uniform_int(0, ng - 1))];
        const double j = rng.uniform(-3, 3);
        dets.push_back({Box(g.box.x1 + j, g.box.y1 + j, g.box.x2 + j, g.box.y2 + j),
                        rng.bernoulli(0.85) ? g.class_id : rng.uniform_int(0, 1),
                        rng.uniform(0.1, 1.0)});
      } else {
        const double x = rng.uniform(0, 40), y = rng.uniform(0, 40);
        dets.push_back({Box(x, y, x + rng.uniform(4, 20), y + rng.uniform(4, 20)),
                        rng.uniform_int(0, 1), rng.uniform(0.1, 1.0)});
      }
    }
    for (double thr : {0.5, 0.75}) {
      // reference is per class; average over classes with gt
      double want = 0;
      int classes = 0;
      for (int c = 0; c < 2; ++c) {
        std::vector<Detection> dc;
        std::vector<LabeledBox> gc;
        for (const auto& d : dets)
          if (d.class_id == c) dc.push_back(d);
        for (const auto& g : gts)
          if (g.class_id == c) gc.push_back(g);
        if (gc.empty()) continue;
        ++classes;
        want += ap_reference(dc, gc, thr);
      }
      if (classes == 0) continue;
      want /= classes;
      const APReport r = compute_ap({dets}, {gts}, {thr});
      const double got = thr == 0.5 ? r.ap50 : r.ap75;
      CHECK(got == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("compute_ap flags detections without any gt of that class") {
  std::vector<std::vector<LabeledBox>> gts = {{{Box(0, 0, 10, 10), 0}}};
  std::vector<std::vector<Detection>> dets = {
      {{Box(0, 0, 10, 10), 0, 1.0}, {Box(20, 20, 30, 30), 2, 0.9}}};
  const APReport r = compute_ap(dets, gts);
  CHECK(r.undefined_class_flag);
  CHECK(r.ap50 == doctest::Approx(1.0));  // class 2 contributes zero, class 0 perfect; mean over gt classes
}

TEST_CASE("pseudo_label_pr endpoints and monotonicity") {
  // oracle detector: a model is unnecessary; craft scenes + use compute path
  // through a trained-free model is noisy, so check the pure matching math on
  // a fabricated detector via scenes with known outputs is overkill; instead
  // exercise invariants with a real tiny model
  const ArchConfig arch{4, 8, 8};
  const ParamVector p = init_params(arch, 11);
  std::vector<Scene> scenes;
  for (uint64_t i = 0; i < 4; ++i) scenes.push_back(generate_scene(i, scene_cfg()));
  const auto pts = pseudo_label_pr(p, arch, scenes, {0.1, 0.3, 0.5, 0.7, 2.0});
  // rows come in (threshold, iou) pairs
  REQUIRE(pts.size() == 10);
  for (size_t i = 0; i < pts.size(); i += 2) {
    CHECK(pts[i].iou_criterion == doctest::Approx(0.5));
    CHECK(pts[i + 1].iou_criterion == doctest::Approx(0.9));
    // recall at IoU 0.9 never exceeds recall at IoU 0.5
    CHECK(pts[i + 1].recall <= pts[i].recall + 1e-12);
  }
  // threshold above all scores: zero predictions, precision undefined-as-1
  CHECK(pts[8].num_pseudo_labels == 0);
  CHECK(pts[8].precision == 1.0);
  CHECK(!pts[8].precision_defined);
  CHECK(pts[8].recall == 0.0);
  // recall nonincreasing in threshold at fixed criterion
  for (size_t i = 2; i < pts.size(); i += 2) CHECK(pts[i].recall <= pts[i - 2].recall + 1e-12);
}

TEST_CASE("multiscale_ensemble single factor equals plain inference") {
  const ArchConfig arch{4, 8, 8};
  const ParamVector p = init_params(arch, 13);
  const Scene s = generate_scene(21, scene_cfg());
  const auto plain = predict_detections(p, s.image, arch, 0.05, 0.5);
  const auto ens = multiscale_ensemble(p, arch, s.image, {1.0}, 0.05, 0.5);
  REQUIRE(ens.size() == plain.size());
  for (size_t i = 0; i < ens.size(); ++i) {
    CHECK(ens[i].score == plain[i].score);
    CHECK(ens[i].box.x1 == plain[i].box.x1);
    CHECK(ens[i].class_id == plain[i].class_id);
  }

  // duplicated factor: NMS removes the clones
  const auto dup = multiscale_ensemble(p, arch, s.image, {1.0, 1.0}, 0.05, 0.5);
  CHECK(dup.size() == plain.size());

  // boxes stay in the original frame for all scales
  const auto multi = multiscale_ensemble(p, arch, s.image, {0.5, 1.0, 1.5}, 0.05, 0.5);
  for (const Detection& d : multi) {
    CHECK(d.box.x1 >= 0);
    CHECK(d.box.y1 >= 0);
    CHECK(d.box.x2 <= s.image.w + 1e-9);
    CHECK(d.box.y2 <= s.image.h + 1e-9);
  }
}

TEST_CASE("score_distance_hist masses and constant model") {
  const ArchConfig arch{4, 8, 8};
  std::vector<Scene> scenes;
  for (uint64_t i = 0; i < 3; ++i) scenes.push_back(generate_scene(100 + i, scene_cfg()));

  // zeroed parameters give a constant network output: all distances 0
  ParamVector zero = init_params(arch, 1);
  for (auto& [name, t] : zero) t.fill(0.0);
  const ScoreDistanceHist hz = score_distance_hist(zero, arch, scenes, 1, 10);
  CHECK(hz.mean_all == doctest::Approx(0.0));
  CHECK(hz.count_fg[0] + hz.count_bg[0] == hz.total);

  const ParamVector p = init_params(arch, 17);
  const ScoreDistanceHist h = score_distance_hist(p, arch, scenes, 1, 10);
  int mass = 0;
  for (int b = 0; b < 10; ++b) mass += h.count_fg[static_cast<size_t>(b)] + h.count_bg[static_cast<size_t>(b)];
  CHECK(mass == h.total);
  // aligned pair grids are the coarser ones: 8x8 + 4x4 = 80 per scene
  CHECK(h.total == 3 * (8 * 8 + 4 * 4));
}

TEST_CASE("gradient_contribution_profile identities") {
  Rng rng(41);
  std::vector<double> kls, gs;
  for (int i = 0; i < 87; ++i) {
    kls.push_back(rng.uniform(0, 1));
    gs.push_back(rng.uniform(0, 1));
  }
  const int M = 10;
  const auto vanilla = gradient_contribution_profile(kls, gs, M, ProfileMode::kVanilla);
  const auto rw = gradient_contribution_profile(kls, gs, M, ProfileMode::kReweighted);

  double vsum = 0, mean = 0;
  for (const auto& b : vanilla) vsum += b.contribution;
  for (double k : kls) mean += k;
  mean /= static_cast<double>(kls.size());
  CHECK(vsum == doctest::Approx(mean));  // vanilla contributions sum to the plain mean

  const ReweightedMeanResult want = reweighted_mean(kls, gs, M);
  double rsum = 0;
  for (const auto& b : rw) rsum += b.contribution;
  CHECK(rsum == doctest::Approx(want.value));

  for (const auto& b : rw) {
    if (b.count == 0) {
      CHECK(b.contribution == 0.0);
      CHECK(b.normalized_count == 0.0);
    } else {
      CHECK(b.normalized_count == 1.0);
    }
  }

  // all samples in one bin: reweighted contribution = mean KL / M
  std::vector<double> g_one(kls.size(), 0.55);
  const auto one = gradient_contribution_profile(kls, g_one, M, ProfileMode::kReweighted);
  CHECK(one[5].contribution == doctest::Approx(mean / M));
}
