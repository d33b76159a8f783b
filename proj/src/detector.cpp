#include "sed/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "sed/rng.hpp"

namespace sed {

void ArchConfig::validate() const {
  if (stem_channels1 < 1 || stem_channels2 < 1 || head_channels < 1)
    throw std::invalid_argument("arch: channel counts must be positive");
  if (num_levels < 1 || num_levels > 5) throw std::invalid_argument("arch: num_levels out of range");
  if (num_classes < 1) throw std::invalid_argument("arch: num_classes must be positive");
  if (!(anchor_base > 0)) throw std::invalid_argument("arch: anchor_base must be positive");
}

AnchorLayout AnchorLayout::make(int image_h, int image_w, const ArchConfig& arch) {
  arch.validate();
  const int max_stride = 4 << (arch.num_levels - 1);
  if (image_h % max_stride != 0 || image_w % max_stride != 0)
    throw std::invalid_argument("layout: image dims not divisible by the largest stride");
  AnchorLayout lay;
  lay.image_h = image_h;
  lay.image_w = image_w;
  for (int i = 0; i < arch.num_levels; ++i) {
    AnchorLevel lv;
    lv.f = 2 + i;
    lv.stride = 1 << lv.f;
    lv.grid_h = image_h / lv.stride;
    lv.grid_w = image_w / lv.stride;
    lv.anchor_side = arch.anchor_base * lv.stride;
    lay.levels.push_back(lv);
  }
  return lay;
}

int AnchorLayout::total_anchors() const {
  int n = 0;
  for (const AnchorLevel& lv : levels) n += lv.num_anchors();
  return n;
}

namespace {

struct ConvSpec {
  std::string name;
  int cin, cout, k, stride;
};

std::vector<ConvSpec> conv_specs(const ArchConfig& a) {
  std::vector<ConvSpec> out = {
      {"stem.conv1", 3, a.stem_channels1, 3, 2},
      {"stem.conv2", a.stem_channels1, a.stem_channels2, 3, 2},
      {"head.conv1", a.stem_channels2, a.head_channels, 3, 1},
      {"head.out", a.head_channels, a.num_outputs(), 3, 1},
  };
  for (int i = 1; i < a.num_levels; ++i)
    out.push_back({"pyr.down" + std::to_string(i), a.stem_channels2, a.stem_channels2, 3, 2});
  return out;
}

}  // namespace

ParamVector init_params(const ArchConfig& arch, uint64_t seed) {
  arch.validate();
  ParamVector p;
  for (const ConvSpec& cs : conv_specs(arch)) {
    p[cs.name + ".w"] = Tensor({cs.cout, cs.cin, cs.k, cs.k});
    p[cs.name + ".b"] = Tensor({cs.cout});
  }
  // Fill in sorted-name order so the stream assignment is reproducible.
  Rng rng(Rng::mix(seed, 0x1217ULL));
  for (auto& [name, t] : p) {
    if (name.ends_with(".b")) continue;
    const int fan_in = t.dim(1) * t.dim(2) * t.dim(3);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.v) v = rng.uniform(-bound, bound);
  }
  return p;
}

ForwardGraph forward_graph(ad::Tape& tape, const ParamVector& params, const Image& img,
                           const ArchConfig& arch) {
  arch.validate();
  ForwardGraph fg;
  fg.layout = AnchorLayout::make(img.h, img.w, arch);

  // HWC image -> CHW tensor
  Tensor x({3, img.h, img.w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.h; ++y)
      for (int xx = 0; xx < img.w; ++xx)
        x[(static_cast<int64_t>(c) * img.h + y) * img.w + xx] = img.at(y, xx, c);

  auto conv = [&](ad::NodeId in, const std::string& name, int stride) {
    return tape.conv2d(in, tape.param(name + ".w", params.at(name + ".w")),
                       tape.param(name + ".b", params.at(name + ".b")), stride, 1);
  };

  ad::NodeId cur = tape.constant(std::move(x));
  cur = tape.relu(conv(cur, "stem.conv1", 2));
  cur = tape.relu(conv(cur, "stem.conv2", 2));

  std::vector<ad::NodeId> features = {cur};
  for (int i = 1; i < arch.num_levels; ++i)
    features.push_back(tape.relu(conv(features.back(), "pyr.down" + std::to_string(i), 2)));

  const int K = arch.num_classes + 1;
  for (int i = 0; i < arch.num_levels; ++i) {
    ad::NodeId h = tape.relu(conv(features[static_cast<size_t>(i)], "head.conv1", 1));
    ad::NodeId o = conv(h, "head.out", 1);
    ForwardGraph::Level lv;
    lv.f = fg.layout.levels[static_cast<size_t>(i)].f;
    lv.grid_h = fg.layout.levels[static_cast<size_t>(i)].grid_h;
    lv.grid_w = fg.layout.levels[static_cast<size_t>(i)].grid_w;
    lv.logits = tape.chw_to_rows(o, 1, K, 0);
    lv.probs = tape.softmax_rows(lv.logits);
    lv.reg = tape.chw_to_rows(o, 1, 4, K);
    fg.levels.push_back(lv);
  }
  return fg;
}

PyramidOutput forward(const ParamVector& params, const Image& img, const ArchConfig& arch) {
  ad::Tape tape;
  const ForwardGraph fg = forward_graph(tape, params, img, arch);
  PyramidOutput out;
  out.layout = fg.layout;
  for (const auto& lv : fg.levels)
    out.levels.push_back({lv.f, lv.grid_h, lv.grid_w, tape.val(lv.probs), tape.val(lv.reg)});
  return out;
}

AssignmentMap assign_targets(const AnchorLayout& layout, const std::vector<LabeledBox>& gts,
                             double fg_thr, double bg_thr) {
  if (!(bg_thr >= 0) || !(bg_thr <= fg_thr) || !(fg_thr <= 1))
    throw std::invalid_argument("assign_targets: need 0 <= bg_thr <= fg_thr <= 1");
  AssignmentMap am;
  am.match.resize(layout.levels.size());

  struct BestAnchor {
    double iou = -1.0;
    int level = -1, anchor = -1;
  };
  std::vector<BestAnchor> best(gts.size());

  for (size_t li = 0; li < layout.levels.size(); ++li) {
    const AnchorLevel& lv = layout.levels[li];
    auto& match = am.match[li];
    match.assign(static_cast<size_t>(lv.num_anchors()), AssignmentMap::kBackground);
    for (int y = 0; y < lv.grid_h; ++y)
      for (int x = 0; x < lv.grid_w; ++x) {
        const int ai = y * lv.grid_w + x;
        const Box ab = lv.anchor_box(y, x);
        double best_iou = 0.0;
        int best_gt = -1;
        for (size_t g = 0; g < gts.size(); ++g) {
          const double v = iou(ab, gts[g].box);
          if (v > best_iou) {
            best_iou = v;
            best_gt = static_cast<int>(g);
          }
          if (v > best[g].iou) best[g] = {v, static_cast<int>(li), ai};
        }
        if (best_gt >= 0 && best_iou >= fg_thr)
          match[static_cast<size_t>(ai)] = best_gt;
        else if (best_iou >= bg_thr)
          match[static_cast<size_t>(ai)] = AssignmentMap::kIgnore;
      }
  }

  // Every gt keeps its single highest-IoU anchor (gts processed in order; a
  // later gt may take over a shared best anchor).
  for (size_t g = 0; g < gts.size(); ++g)
    if (best[g].level >= 0)
      am.match[static_cast<size_t>(best[g].level)][static_cast<size_t>(best[g].anchor)] =
          static_cast<int>(g);
  return am;
}

AssignmentMap subsample_background(const AssignmentMap& am, Rng& rng, int sample_size,
                                   double fg_fraction) {
  if (sample_size <= 0) return am;
  AssignmentMap out = am;
  std::vector<std::pair<int, int>> fg, bg;
  for (size_t li = 0; li < am.match.size(); ++li)
    for (size_t ai = 0; ai < am.match[li].size(); ++ai) {
      const int m = am.match[li][ai];
      if (m >= 0)
        fg.emplace_back(static_cast<int>(li), static_cast<int>(ai));
      else if (m == AssignmentMap::kBackground)
        bg.emplace_back(static_cast<int>(li), static_cast<int>(ai));
    }

  const int fg_cap = std::max(1, static_cast<int>(fg_fraction * sample_size));
  if (static_cast<int>(fg.size()) > fg_cap) {
    for (int i = static_cast<int>(fg.size()) - 1; i > 0; --i)
      std::swap(fg[static_cast<size_t>(i)], fg[static_cast<size_t>(rng.uniform_int(0, i))]);
    for (size_t i = static_cast<size_t>(fg_cap); i < fg.size(); ++i)
      out.match[static_cast<size_t>(fg[i].first)][static_cast<size_t>(fg[i].second)] =
          AssignmentMap::kIgnore;
    fg.resize(static_cast<size_t>(fg_cap));
  }

  const int bg_keep = std::max(0, sample_size - static_cast<int>(fg.size()));
  if (static_cast<int>(bg.size()) > bg_keep) {
    for (int i = static_cast<int>(bg.size()) - 1; i > 0; --i)
      std::swap(bg[static_cast<size_t>(i)], bg[static_cast<size_t>(rng.uniform_int(0, i))]);
    for (size_t i = static_cast<size_t>(bg_keep); i < bg.size(); ++i)
      out.match[static_cast<size_t>(bg[i].first)][static_cast<size_t>(bg[i].second)] =
          AssignmentMap::kIgnore;
  }
  return out;
}

std::vector<Detection> detections_from_output(const PyramidOutput& out, double score_thr,
                                              double nms_thr) {
  const int C = out.levels.empty() ? 0 : out.levels[0].probs.dim(1) - 1;
  std::vector<Detection> cands;
  for (size_t li = 0; li < out.levels.size(); ++li) {
    const LevelOutput& lo = out.levels[li];
    const AnchorLevel& lv = out.layout.levels[li];
    for (int y = 0; y < lo.grid_h; ++y)
      for (int x = 0; x < lo.grid_w; ++x) {
        const int ai = y * lo.grid_w + x;
        const double score = 1.0 - lo.probs[static_cast<int64_t>(ai) * (C + 1) + C];
        if (score < score_thr) continue;
        int cls = 0;
        double best = lo.probs[static_cast<int64_t>(ai) * (C + 1)];
        for (int k = 1; k < C; ++k)
          if (lo.probs[static_cast<int64_t>(ai) * (C + 1) + k] > best) {
            best = lo.probs[static_cast<int64_t>(ai) * (C + 1) + k];
            cls = k;
          }
        BoxDelta d;
        for (int k = 0; k < 4; ++k) d[static_cast<size_t>(k)] = lo.reg[static_cast<int64_t>(ai) * 4 + k];
        Box b = decode_box(d, lv.anchor_box(y, x));
        b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(out.layout.image_w));
        b.x2 = std::clamp(b.x2, 0.0, static_cast<double>(out.layout.image_w));
        b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(out.layout.image_h));
        b.y2 = std::clamp(b.y2, 0.0, static_cast<double>(out.layout.image_h));
        if (!(b.x2 > b.x1) || !(b.y2 > b.y1)) continue;
        cands.push_back({b, cls, score});
      }
  }
  return nms(cands, nms_thr);
}

std::vector<Detection> predict_detections(const ParamVector& params, const Image& img,
                                          const ArchConfig& arch, double score_thr,
                                          double nms_thr) {
  return detections_from_output(forward(params, img, arch), score_thr, nms_thr);
}

}  // namespace sed
