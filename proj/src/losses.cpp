#include "sed/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sed {

namespace {

void require_distribution(std::span<const double> p, const char* who) {
  double sum = 0.0;
  for (double x : p) {
    if (!(x >= 0.0)) throw std::invalid_argument(std::string(who) + ": negative probability");
    sum += x;
  }
  if (std::abs(sum - 1.0) > 1e-6)
    throw std::invalid_argument(std::string(who) + ": probabilities do not sum to 1");
}

}  // namespace

double kl_div(std::span<const double> p_target, std::span<const double> p) {
  if (p_target.size() != p.size()) throw std::invalid_argument("kl_div: size mismatch");
  require_distribution(p_target, "kl_div");
  require_distribution(p, "kl_div");
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const double t = p_target[i];
    if (t <= 0.0) continue;
    s += t * (std::log(t) - std::log(std::max(p[i], kProbEps)));
  }
  return s;
}

double js_div(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("js_div: size mismatch");
  std::vector<double> m(p.size());
  for (size_t i = 0; i < p.size(); ++i) m[i] = 0.5 * (p[i] + q[i]);
  return 0.5 * kl_div(p, m) + 0.5 * kl_div(q, m);
}

double grad_norm(std::span<const double> p, std::span<const double> p_target) {
  if (p.size() != p_target.size()) throw std::invalid_argument("grad_norm: size mismatch");
  double s = 0.0;
  for (size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - p_target[i]);
  return 0.5 * s;
}

GradHistogram GradHistogram::build(std::span<const double> gs, int bins) {
  if (bins < 1) throw std::invalid_argument("grad histogram: bins must be >= 1");
  GradHistogram h;
  h.bins = bins;
  h.counts.assign(static_cast<size_t>(bins), 0);
  for (double g : gs) ++h.counts[static_cast<size_t>(h.bin_of(g))];
  return h;
}

int GradHistogram::bin_of(double g) const {
  if (!(g >= 0.0) || !(g <= 1.0 + 1e-12)) throw std::invalid_argument("grad histogram: g outside [0, 1]");
  const int b = static_cast<int>(std::floor(g * bins));
  return std::min(b, bins - 1);
}

int GradHistogram::total() const {
  int n = 0;
  for (int c : counts) n += c;
  return n;
}

ReweightedMeanResult reweighted_mean(std::span<const double> per_sample_kl,
                                     std::span<const double> per_sample_g, int bins) {
  if (per_sample_kl.size() != per_sample_g.size())
    throw std::invalid_argument("reweighted_mean: size mismatch");
  ReweightedMeanResult r;
  r.hist = GradHistogram::build(per_sample_g, bins);
  if (per_sample_kl.empty()) {
    r.empty_input = true;
    return r;
  }
  double s = 0.0;
  for (size_t i = 0; i < per_sample_kl.size(); ++i)
    s += per_sample_kl[i] / r.hist.counts[static_cast<size_t>(r.hist.bin_of(per_sample_g[i]))];
  r.value = s / bins;
  return r;
}

std::vector<double> aggregation_weights(std::span<const double> gs, int bins, bool reweight) {
  std::vector<double> w(gs.size());
  if (gs.empty()) return w;
  if (reweight) {
    const GradHistogram h = GradHistogram::build(gs, bins);
    for (size_t i = 0; i < gs.size(); ++i)
      w[i] = 1.0 / (static_cast<double>(bins) * h.counts[static_cast<size_t>(h.bin_of(gs[i]))]);
  } else {
    const double inv = 1.0 / static_cast<double>(gs.size());
    std::fill(w.begin(), w.end(), inv);
  }
  return w;
}

LossReport total_loss(double sup_cls, double sup_reg, double scale_cls, double scale_reg,
                      double distill_cls, double distill_reg, int n_u, int n_s,
                      double lambda_scale, double lambda_distill) {
  if (n_s < 1) throw std::invalid_argument("total_loss: n_s must be >= 1");
  LossReport r;
  r.supervised_cls = sup_cls;
  r.supervised_reg = sup_reg;
  r.scale_cls = scale_cls;
  r.scale_reg = scale_reg;
  r.distill_cls = distill_cls;
  r.distill_reg = distill_reg;
  r.multiplier = static_cast<double>(n_u) / static_cast<double>(n_s);
  r.lambda_scale = lambda_scale;
  r.lambda_distill = lambda_distill;
  r.total = r.recompute_total();
  return r;
}

// ---- supervised -------------------------------------------------------------

SupervisedTargets supervised_targets(const AnchorLayout& layout,
                                     const std::vector<LabeledBox>& gts,
                                     const AssignmentMap& assign, int num_classes) {
  SupervisedTargets tg;
  for (size_t li = 0; li < layout.levels.size(); ++li) {
    const AnchorLevel& lv = layout.levels[li];
    const auto& match = assign.match[li];
    for (int y = 0; y < lv.grid_h; ++y)
      for (int x = 0; x < lv.grid_w; ++x) {
        const int m = match[static_cast<size_t>(y * lv.grid_w + x)];
        if (m == AssignmentMap::kIgnore) {
          tg.cls.push_back(-1);
          tg.fg.push_back(false);
          tg.reg.push_back({});
        } else if (m == AssignmentMap::kBackground) {
          tg.cls.push_back(num_classes);  // background is the last class
          tg.fg.push_back(false);
          tg.reg.push_back({});
          ++tg.num_cls_anchors;
        } else {
          tg.cls.push_back(gts[static_cast<size_t>(m)].class_id);
          tg.fg.push_back(true);
          tg.reg.push_back(encode_box(gts[static_cast<size_t>(m)].box, lv.anchor_box(y, x)));
          ++tg.num_cls_anchors;
          ++tg.num_fg;
        }
      }
  }
  return tg;
}

std::pair<double, double> supervised_loss(const PyramidOutput& out, const AssignmentMap& assign,
                                          const std::vector<LabeledBox>& gts) {
  const int K = out.levels.at(0).probs.dim(1);
  const SupervisedTargets tg = supervised_targets(out.layout, gts, assign, K - 1);
  double cls = 0.0, reg = 0.0;
  size_t row = 0;
  for (const LevelOutput& lo : out.levels) {
    const int n = lo.grid_h * lo.grid_w;
    for (int i = 0; i < n; ++i, ++row) {
      const int c = tg.cls[row];
      if (c < 0) continue;
      cls += -std::log(std::max(lo.probs[static_cast<int64_t>(i) * K + c], kProbEps));
      if (tg.fg[row])
        for (int k = 0; k < 4; ++k) {
          const double d = lo.reg[static_cast<int64_t>(i) * 4 + k] - tg.reg[row][static_cast<size_t>(k)];
          reg += d * d;
        }
    }
  }
  cls = tg.num_cls_anchors > 0 ? cls / tg.num_cls_anchors : 0.0;
  reg = tg.num_fg > 0 ? reg / (4.0 * tg.num_fg) : 0.0;
  return {cls, reg};
}

// ---- scale consistency ------------------------------------------------------

std::vector<std::pair<int, int>> aligned_level_pairs(const PyramidOutput& full,
                                                     const PyramidOutput& down, int s) {
  if (s < 1) throw std::invalid_argument("scale pair: s must be >= 1");
  std::vector<std::pair<int, int>> pairs;
  for (size_t i = 0; i < full.levels.size(); ++i)
    for (size_t j = 0; j < down.levels.size(); ++j)
      if (down.levels[j].f == full.levels[i].f - s) {
        if (down.levels[j].grid_h != full.levels[i].grid_h ||
            down.levels[j].grid_w != full.levels[i].grid_w)
          throw std::invalid_argument("scale pair: aligned level grids do not match");
        pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
      }
  if (pairs.empty()) throw std::invalid_argument("scale pair: no aligned levels for this s");
  return pairs;
}

ConsistencyTerms scale_terms(const PyramidOutput& full, const PyramidOutput& down, int s) {
  ConsistencyTerms t;
  const int K = full.levels.at(0).probs.dim(1);
  for (const auto& [fi, di] : aligned_level_pairs(full, down, s)) {
    const LevelOutput& a = full.levels[static_cast<size_t>(fi)];
    const LevelOutput& b = down.levels[static_cast<size_t>(di)];
    const int n = a.grid_h * a.grid_w;
    for (int i = 0; i < n; ++i) {
      std::span<const double> pa(a.probs.v.data() + static_cast<int64_t>(i) * K, static_cast<size_t>(K));
      std::span<const double> pb(b.probs.v.data() + static_cast<int64_t>(i) * K, static_cast<size_t>(K));
      t.kl.push_back(kl_div(pa, pb) + kl_div(pb, pa));
      t.g.push_back(grad_norm(pa, pb));
      double rs = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double d = a.reg[static_cast<int64_t>(i) * 4 + k] - b.reg[static_cast<int64_t>(i) * 4 + k];
        rs += d * d;
      }
      t.reg_sq.push_back(0.25 * rs);
    }
  }
  return t;
}

static std::pair<double, double> aggregate_consistency(const ConsistencyTerms& t, bool reweight,
                                                       int bins) {
  if (t.kl.empty()) return {0.0, 0.0};
  double cls;
  if (reweight) {
    cls = reweighted_mean(t.kl, t.g, bins).value;
  } else {
    cls = 0.0;
    for (double v : t.kl) cls += v;
    cls /= static_cast<double>(t.kl.size());
  }
  double reg = 0.0;
  for (double v : t.reg_sq) reg += v;
  reg /= static_cast<double>(t.reg_sq.size());
  return {cls, reg};
}

std::pair<double, double> scale_consistency_loss(const PyramidOutput& full,
                                                 const PyramidOutput& down, int s,
                                                 bool reweight, int bins) {
  return aggregate_consistency(scale_terms(full, down, s), reweight, bins);
}

// ---- self-distillation ------------------------------------------------------

static void require_same_layout(const PyramidOutput& a, const PyramidOutput& b) {
  if (!(a.layout == b.layout)) throw std::invalid_argument("distill: anchor layouts differ");
}

ConsistencyTerms distill_terms_soft(const PyramidOutput& teacher, const PyramidOutput& student) {
  require_same_layout(teacher, student);
  ConsistencyTerms t;
  const int K = teacher.levels.at(0).probs.dim(1);
  for (size_t li = 0; li < teacher.levels.size(); ++li) {
    const LevelOutput& te = teacher.levels[li];
    const LevelOutput& st = student.levels[li];
    const int n = te.grid_h * te.grid_w;
    for (int i = 0; i < n; ++i) {
      std::span<const double> pt(te.probs.v.data() + static_cast<int64_t>(i) * K, static_cast<size_t>(K));
      std::span<const double> ps(st.probs.v.data() + static_cast<int64_t>(i) * K, static_cast<size_t>(K));
      t.kl.push_back(kl_div(pt, ps));
      t.g.push_back(grad_norm(ps, pt));
      double rs = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double d = st.reg[static_cast<int64_t>(i) * 4 + k] - te.reg[static_cast<int64_t>(i) * 4 + k];
        rs += d * d;
      }
      t.reg_sq.push_back(0.25 * rs);
    }
  }
  return t;
}

HardTargets hard_targets(const PyramidOutput& teacher, const PyramidOutput& student, double tau,
                         double tau_bg) {
  require_same_layout(teacher, student);
  if (!(tau_bg <= tau)) throw std::invalid_argument("hard_targets: need tau_bg <= tau");
  HardTargets tg;
  const int K = teacher.levels.at(0).probs.dim(1);
  const int C = K - 1;
  for (size_t li = 0; li < teacher.levels.size(); ++li) {
    const LevelOutput& te = teacher.levels[li];
    const LevelOutput& st = student.levels[li];
    const int n = te.grid_h * te.grid_w;
    for (int i = 0; i < n; ++i) {
      const double fg_score = 1.0 - te.probs[static_cast<int64_t>(i) * K + C];
      int cls = -1;
      bool fg = false;
      BoxDelta reg{};
      if (fg_score >= tau) {
        cls = 0;
        double best = te.probs[static_cast<int64_t>(i) * K];
        for (int k = 1; k < C; ++k)
          if (te.probs[static_cast<int64_t>(i) * K + k] > best) {
            best = te.probs[static_cast<int64_t>(i) * K + k];
            cls = k;
          }
        fg = true;
        for (int k = 0; k < 4; ++k) reg[static_cast<size_t>(k)] = te.reg[static_cast<int64_t>(i) * 4 + k];
        ++tg.num_fg;
      } else if (fg_score < tau_bg) {
        cls = C;  // background
      }
      tg.cls.push_back(cls);
      tg.fg.push_back(fg);
      tg.reg.push_back(reg);
      if (cls >= 0) {
        // g against the one-hot target; CE of the student toward it
        double s = 0.0;
        for (int k = 0; k < K; ++k) {
          const double target = (k == cls) ? 1.0 : 0.0;
          s += std::abs(st.probs[static_cast<int64_t>(i) * K + k] - target);
        }
        tg.g.push_back(0.5 * s);
        tg.ce.push_back(-std::log(std::max(st.probs[static_cast<int64_t>(i) * K + cls], kProbEps)));
      }
    }
  }
  return tg;
}

std::pair<double, double> self_distill_loss(const PyramidOutput& teacher,
                                            const PyramidOutput& student, DistillMode mode,
                                            double tau, double tau_bg, bool reweight, int bins) {
  if (mode == DistillMode::kSoft) {
    return aggregate_consistency(distill_terms_soft(teacher, student), reweight, bins);
  }
  const HardTargets tg = hard_targets(teacher, student, tau, tau_bg);
  double cls = 0.0;
  if (!tg.ce.empty()) {
    if (reweight) {
      cls = reweighted_mean(tg.ce, tg.g, bins).value;
    } else {
      for (double v : tg.ce) cls += v;
      cls /= static_cast<double>(tg.ce.size());
    }
  }
  double reg = 0.0;
  if (tg.num_fg > 0) {
    const int K = teacher.levels.at(0).probs.dim(1);
    (void)K;
    size_t row = 0;
    for (size_t li = 0; li < student.levels.size(); ++li) {
      const LevelOutput& st = student.levels[li];
      const int n = st.grid_h * st.grid_w;
      for (int i = 0; i < n; ++i, ++row)
        if (tg.fg[row])
          for (int k = 0; k < 4; ++k) {
            const double d =
                st.reg[static_cast<int64_t>(i) * 4 + k] - tg.reg[row][static_cast<size_t>(k)];
            reg += d * d;
          }
    }
    reg /= 4.0 * tg.num_fg;
  }
  return {cls, reg};
}

// ---- graph builders ---------------------------------------------------------

LossNodes supervised_loss_graph(ad::Tape& tape, const ForwardGraph& fg,
                                const SupervisedTargets& tg, double cls_norm, double reg_norm) {
  LossNodes out;
  std::vector<ad::NodeId> cls_terms, reg_terms;
  size_t row0 = 0;
  for (const auto& lv : fg.levels) {
    const int n = lv.grid_h * lv.grid_w;
    auto cls = std::make_shared<std::vector<int>>(tg.cls.begin() + static_cast<long>(row0),
                                                  tg.cls.begin() + static_cast<long>(row0 + n));
    auto cw = std::make_shared<std::vector<double>>(static_cast<size_t>(n), cls_norm);
    cls_terms.push_back(tape.ce_rows(lv.probs, cls, cw, kProbEps));

    auto target = std::make_shared<Tensor>(Tensor({n, 4}));
    auto rw = std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0);
    bool any_fg = false;
    for (int i = 0; i < n; ++i)
      if (tg.fg[row0 + static_cast<size_t>(i)]) {
        any_fg = true;
        (*rw)[static_cast<size_t>(i)] = reg_norm;
        for (int k = 0; k < 4; ++k)
          (*target)[static_cast<int64_t>(i) * 4 + k] = tg.reg[row0 + static_cast<size_t>(i)][static_cast<size_t>(k)];
      }
    if (any_fg) reg_terms.push_back(tape.l2_rows(lv.reg, target, rw));
    row0 += static_cast<size_t>(n);
  }
  out.cls = tape.add_n(cls_terms);
  out.reg = reg_terms.empty() ? tape.constant(Tensor::scalar(0.0)) : tape.add_n(reg_terms);
  return out;
}

namespace {

std::vector<std::pair<int, int>> graph_level_pairs(const ForwardGraph& full,
                                                   const ForwardGraph& down, int s) {
  std::vector<std::pair<int, int>> pairs;
  for (size_t i = 0; i < full.levels.size(); ++i)
    for (size_t j = 0; j < down.levels.size(); ++j)
      if (down.levels[j].f == full.levels[i].f - s)
        pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
  if (pairs.empty()) throw std::invalid_argument("scale graph: no aligned levels");
  return pairs;
}

}  // namespace

ScaleTargets capture_scale_targets(const ad::Tape& tape, const ForwardGraph& full,
                                   const ForwardGraph& down, int s) {
  ScaleTargets t;
  for (const auto& [fi, di] : graph_level_pairs(full, down, s)) {
    t.full_probs.push_back(std::make_shared<Tensor>(tape.val(full.levels[static_cast<size_t>(fi)].probs)));
    t.down_probs.push_back(std::make_shared<Tensor>(tape.val(down.levels[static_cast<size_t>(di)].probs)));
  }
  return t;
}

LossNodes scale_consistency_graph(ad::Tape& tape, const ForwardGraph& full,
                                  const ForwardGraph& down, int s,
                                  std::span<const double> weights, double reg_norm,
                                  const ScaleTargets* frozen) {
  const auto pairs = graph_level_pairs(full, down, s);
  const ScaleTargets captured =
      frozen ? ScaleTargets{} : capture_scale_targets(tape, full, down, s);
  const ScaleTargets& targets = frozen ? *frozen : captured;

  std::vector<ad::NodeId> cls_terms, reg_terms;
  size_t w0 = 0;
  for (size_t pi = 0; pi < pairs.size(); ++pi) {
    const auto& a = full.levels[static_cast<size_t>(pairs[pi].first)];
    const auto& b = down.levels[static_cast<size_t>(pairs[pi].second)];
    const int n = a.grid_h * a.grid_w;
    auto w = std::make_shared<std::vector<double>>(weights.begin() + static_cast<long>(w0),
                                                   weights.begin() + static_cast<long>(w0 + n));
    // KL(sg(full), down) + KL(sg(down), full), one row weight for both halves
    cls_terms.push_back(tape.kl_rows(b.probs, targets.full_probs.at(pi), w, kProbEps));
    cls_terms.push_back(tape.kl_rows(a.probs, targets.down_probs.at(pi), w, kProbEps));
    reg_terms.push_back(tape.scale(tape.sum_all(tape.square(tape.sub(a.reg, b.reg))), reg_norm));
    w0 += static_cast<size_t>(n);
  }
  if (w0 != weights.size()) throw std::invalid_argument("scale graph: weight length mismatch");
  return {tape.add_n(cls_terms), tape.add_n(reg_terms)};
}

LossNodes distill_soft_graph(ad::Tape& tape, const PyramidOutput& teacher,
                             const ForwardGraph& student, std::span<const double> weights,
                             double reg_norm) {
  std::vector<ad::NodeId> cls_terms, reg_terms;
  size_t w0 = 0;
  for (size_t li = 0; li < student.levels.size(); ++li) {
    const auto& st = student.levels[li];
    const LevelOutput& te = teacher.levels.at(li);
    const int n = st.grid_h * st.grid_w;
    auto w = std::make_shared<std::vector<double>>(weights.begin() + static_cast<long>(w0),
                                                   weights.begin() + static_cast<long>(w0 + n));
    cls_terms.push_back(tape.kl_rows(st.probs, std::make_shared<Tensor>(te.probs), w, kProbEps));
    auto rw = std::make_shared<std::vector<double>>(static_cast<size_t>(n), reg_norm);
    reg_terms.push_back(tape.l2_rows(st.reg, std::make_shared<Tensor>(te.reg), rw));
    w0 += static_cast<size_t>(n);
  }
  if (w0 != weights.size()) throw std::invalid_argument("distill graph: weight length mismatch");
  return {tape.add_n(cls_terms), tape.add_n(reg_terms)};
}

LossNodes distill_hard_graph(ad::Tape& tape, const HardTargets& tg, const ForwardGraph& student,
                             std::span<const double> weights, double reg_norm) {
  std::vector<ad::NodeId> cls_terms, reg_terms;
  size_t row0 = 0, wi = 0;
  for (const auto& st : student.levels) {
    const int n = st.grid_h * st.grid_w;
    auto cls = std::make_shared<std::vector<int>>(tg.cls.begin() + static_cast<long>(row0),
                                                  tg.cls.begin() + static_cast<long>(row0 + n));
    auto cw = std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i)
      if ((*cls)[static_cast<size_t>(i)] >= 0) (*cw)[static_cast<size_t>(i)] = weights[wi++];
    cls_terms.push_back(tape.ce_rows(st.probs, cls, cw, kProbEps));

    auto target = std::make_shared<Tensor>(Tensor({n, 4}));
    auto rw = std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0);
    bool any_fg = false;
    for (int i = 0; i < n; ++i)
      if (tg.fg[row0 + static_cast<size_t>(i)]) {
        any_fg = true;
        (*rw)[static_cast<size_t>(i)] = reg_norm;
        for (int k = 0; k < 4; ++k)
          (*target)[static_cast<int64_t>(i) * 4 + k] = tg.reg[row0 + static_cast<size_t>(i)][static_cast<size_t>(k)];
      }
    if (any_fg) reg_terms.push_back(tape.l2_rows(st.reg, target, rw));
    row0 += static_cast<size_t>(n);
  }
  if (wi != weights.size()) throw std::invalid_argument("hard distill graph: weight length mismatch");
  return {tape.add_n(cls_terms),
          reg_terms.empty() ? tape.constant(Tensor::scalar(0.0)) : tape.add_n(reg_terms)};
}

}  // namespace sed
