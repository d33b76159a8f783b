#include "sed/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace sed {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
         x2 > x1 && y2 > y1;
}

static void require_valid(const Box& b, const char* who) {
  if (!b.valid()) throw std::invalid_argument(std::string(who) + ": degenerate box");
}

static double intersection_area(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  return (iw > 0 && ih > 0) ? iw * ih : 0.0;
}

double iou(const Box& a, const Box& b) {
  require_valid(a, "iou");
  require_valid(b, "iou");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

double giou(const Box& a, const Box& b) {
  require_valid(a, "giou");
  require_valid(b, "giou");
  const double inter = intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const Box hull(std::min(a.x1, b.x1), std::min(a.y1, b.y1),
                 std::max(a.x2, b.x2), std::max(a.y2, b.y2));
  return inter / uni - (hull.area() - uni) / hull.area();
}

std::vector<Detection> nms(const std::vector<Detection>& dets, double thr) {
  std::vector<size_t> order(dets.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) {
    return dets[i].score > dets[j].score;
  });

  std::vector<Detection> kept;
  kept.reserve(dets.size());
  for (size_t i : order) {
    const Detection& d = dets[i];
    bool keep = true;
    for (const Detection& k : kept) {
      if (k.class_id == d.class_id && iou(k.box, d.box) > thr) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(d);
  }
  return kept;
}

BoxDelta encode_box(const Box& gt, const Box& anchor) {
  require_valid(gt, "encode_box");
  require_valid(anchor, "encode_box");
  return {(gt.cx() - anchor.cx()) / anchor.width(),
          (gt.cy() - anchor.cy()) / anchor.height(),
          std::log(gt.width() / anchor.width()),
          std::log(gt.height() / anchor.height())};
}

Box decode_box(const BoxDelta& d, const Box& anchor) {
  require_valid(anchor, "decode_box");
  for (double x : d)
    if (!std::isfinite(x)) throw std::invalid_argument("decode_box: non-finite delta");
  const double cx = anchor.cx() + d[0] * anchor.width();
  const double cy = anchor.cy() + d[1] * anchor.height();
  const double w = std::exp(d[2]) * anchor.width();
  const double h = std::exp(d[3]) * anchor.height();
  return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
}

Box rescale_box(const Box& b, double factor) {
  if (!(factor > 0) || !std::isfinite(factor))
    throw std::invalid_argument("rescale_box: factor must be positive");
  return Box(b.x1 * factor, b.y1 * factor, b.x2 * factor, b.y2 * factor);
}

}  // namespace sed
