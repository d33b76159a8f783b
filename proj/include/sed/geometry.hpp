#pragma once

#include <array>
#include <vector>

namespace sed {

// Axis-aligned box, half-open continuous coordinates (no +1 pixel convention).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  Box() = default;
  Box(double x1_, double y1_, double x2_, double y2_) : x1(x1_), y1(y1_), x2(x2_), y2(y2_) {}

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const;
};

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

using BoxDelta = std::array<double, 4>;  // (dx, dy, dw, dh), anchor-relative

double iou(const Box& a, const Box& b);
double giou(const Box& a, const Box& b);

// Greedy class-wise suppression: sort by score descending (ties: lower input
// index first), keep a detection iff IoU with every previously kept detection
// of the same class is <= thr. Output preserves kept order.
std::vector<Detection> nms(const std::vector<Detection>& dets, double thr);

// delta = ((cx_gt-cx_a)/w_a, (cy_gt-cy_a)/h_a, ln(w_gt/w_a), ln(h_gt/h_a)).
BoxDelta encode_box(const Box& gt, const Box& anchor);
Box decode_box(const BoxDelta& delta, const Box& anchor);

Box rescale_box(const Box& b, double factor);

}  // namespace sed
