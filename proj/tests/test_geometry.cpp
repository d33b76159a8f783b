#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "sed/geometry.hpp"
#include "sed/rng.hpp"

using namespace sed;

namespace {

// Pixel-counting IoU oracle on a fine integer grid.
double iou_pixel_oracle(const Box& a, const Box& b, int res = 400) {
  const double x0 = std::min(a.x1, b.x1), x1 = std::max(a.x2, b.x2);
  const double y0 = std::min(a.y1, b.y1), y1 = std::max(a.y2, b.y2);
  const double dx = (x1 - x0) / res, dy = (y1 - y0) / res;
  int64_t in_a = 0, in_b = 0, in_both = 0;
  for (int i = 0; i < res; ++i)
    for (int j = 0; j < res; ++j) {
      const double px = x0 + (i + 0.5) * dx, py = y0 + (j + 0.5) * dy;
      const bool ia = px > a.x1 && px < a.x2 && py > a.y1 && py < a.y2;
      const bool ib = px > b.x1 && px < b.x2 && py > b.y1 && py < b.y2;
      in_a += ia;
      in_b += ib;
      in_both += ia && ib;
    }
  return static_cast<double>(in_both) / static_cast<double>(in_a + in_b - in_both);
}

// Independent quadratic reference: a detection survives iff no higher-priority
// survivor of its class overlaps it above the threshold.
std::vector<Detection> nms_reference(const std::vector<Detection>& dets, double thr) {
  std::vector<size_t> order(dets.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t i, size_t j) {
    if (dets[i].score != dets[j].score) return dets[i].score > dets[j].score;
    return i < j;
  });
  std::vector<bool> alive(dets.size(), true);
  for (size_t oi = 0; oi < order.size(); ++oi) {
    if (!alive[order[oi]]) continue;
    for (size_t oj = oi + 1; oj < order.size(); ++oj) {
      if (!alive[order[oj]]) continue;
      if (dets[order[oi]].class_id == dets[order[oj]].class_id &&
          iou(dets[order[oi]].box, dets[order[oj]].box) > thr)
        alive[order[oj]] = false;
    }
  }
  std::vector<Detection> out;
  for (size_t oi : order)
    if (alive[oi]) out.push_back(dets[oi]);
  return out;
}

Box random_box(Rng& rng, double extent = 50.0) {
  const double x1 = rng.uniform(0, extent), y1 = rng.uniform(0, extent);
  return Box(x1, y1, x1 + rng.uniform(1.0, extent / 2), y1 + rng.uniform(1.0, extent / 2));
}

}  // namespace

TEST_CASE("iou basics") {
  CHECK(iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == doctest::Approx(1.0));
  CHECK(iou(Box(0, 0, 10, 10), Box(10, 10, 20, 20)) == doctest::Approx(0.0));
  CHECK(iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(iou(Box(0, 0, 0, 10), Box(0, 0, 1, 1)), std::invalid_argument);
}

TEST_CASE("iou matches pixel-counting oracle") {
  CHECK(iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)) ==
        doctest::Approx(iou_pixel_oracle(Box(0, 0, 10, 10), Box(5, 0, 15, 10))).epsilon(0.01));
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const Box a = random_box(rng), b = random_box(rng);
    CHECK(iou(a, b) == doctest::Approx(iou_pixel_oracle(a, b)).epsilon(0.02));
  }
}

TEST_CASE("iou symmetry and range") {
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Box a = random_box(rng), b = random_box(rng);
    const double v = iou(a, b);
    CHECK(v == iou(b, a));
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("giou closed-form cases") {
  CHECK(giou(Box(0, 0, 5, 5), Box(0, 0, 5, 5)) == doctest::Approx(1.0));
  // disjoint side-by-side: 0 - (3-2)/3
  CHECK(giou(Box(0, 0, 1, 1), Box(2, 0, 3, 1)) == doctest::Approx(-1.0 / 3.0));
  // nested: enclosing box equals the outer box, penalty vanishes
  CHECK(giou(Box(0, 0, 4, 4), Box(1, 1, 2, 2)) == doctest::Approx(1.0 / 16.0));
  CHECK(giou(Box(0, 0, 4, 4), Box(1, 1, 2, 2)) == doctest::Approx(iou(Box(0, 0, 4, 4), Box(1, 1, 2, 2))));
}

TEST_CASE("giou properties") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const Box a = random_box(rng), b = random_box(rng);
    CHECK(giou(a, b) <= iou(a, b) + 1e-12);
    CHECK(giou(a, b) >= -1.0);
  }
  // monotone decrease with separation at fixed shape
  double prev = 1.0;
  for (double gap = 0; gap < 200; gap += 10) {
    const double g = giou(Box(0, 0, 10, 10), Box(10 + gap, 0, 20 + gap, 10));
    CHECK(g <= prev + 1e-12);
    prev = g;
  }
}

TEST_CASE("nms hand cases") {
  const Detection a{Box(0, 0, 10, 10), 0, 0.9};
  const Detection b{Box(0, 0, 10, 10), 0, 0.8};
  const Detection c{Box(50, 50, 60, 60), 0, 0.7};

  CHECK(nms({a}, 0.5).size() == 1);
  const auto kept = nms({b, a}, 0.5);
  REQUIRE(kept.size() == 1);
  CHECK(kept[0].score == doctest::Approx(0.9));
  CHECK(nms({a, c}, 0.5).size() == 2);
  CHECK(nms({}, 0.5).empty());
  // same box, different class: both survive
  const Detection d{Box(0, 0, 10, 10), 1, 0.8};
  CHECK(nms({a, d}, 0.5).size() == 2);
}

TEST_CASE("nms equals quadratic reference on random inputs") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Detection> dets;
    const int n = rng.uniform_int(0, 20);
    for (int i = 0; i < n; ++i) {
      Detection d;
      const double x1 = rng.uniform(0, 40), y1 = rng.uniform(0, 40);
      d.box = Box(x1, y1, x1 + rng.uniform(2, 20), y1 + rng.uniform(2, 20));
      d.class_id = rng.uniform_int(0, 2);
      d.score = rng.uniform(0, 1);
      dets.push_back(d);
    }
    const double thr = rng.uniform(0.1, 0.9);
    const auto got = nms(dets, thr);
    const auto want = nms_reference(dets, thr);
    REQUIRE(got.size() == want.size());
    for (size_t i = 0; i < got.size(); ++i) {
      CHECK(got[i].score == want[i].score);
      CHECK(got[i].class_id == want[i].class_id);
      CHECK(got[i].box.x1 == want[i].box.x1);
    }
  }
}

TEST_CASE("encode/decode") {
  const Box anchor(0, 0, 10, 10);
  const BoxDelta zero = encode_box(anchor, anchor);
  for (double v : zero) CHECK(v == doctest::Approx(0.0));

  const BoxDelta d = encode_box(Box(0, 0, 20, 20), Box(0, 0, 10, 10));
  CHECK(d[0] == doctest::Approx(0.5));
  CHECK(d[1] == doctest::Approx(0.5));
  CHECK(d[2] == doctest::Approx(std::log(2.0)));
  CHECK(d[3] == doctest::Approx(std::log(2.0)));

  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const Box gt = random_box(rng), anc = random_box(rng);
    const Box back = decode_box(encode_box(gt, anc), anc);
    CHECK(std::abs(back.x1 - gt.x1) < 1e-9);
    CHECK(std::abs(back.y1 - gt.y1) < 1e-9);
    CHECK(std::abs(back.x2 - gt.x2) < 1e-9);
    CHECK(std::abs(back.y2 - gt.y2) < 1e-9);
  }
}

TEST_CASE("rescale_box") {
  const Box b(1, 1, 3, 3);
  const Box r = rescale_box(b, 2.0);
  CHECK(r.x1 == 2);
  CHECK(r.y1 == 2);
  CHECK(r.x2 == 6);
  CHECK(r.y2 == 6);
  const Box back = rescale_box(rescale_box(b, 2.0), 0.5);
  CHECK(back.x1 == doctest::Approx(b.x1));
  CHECK(back.x2 == doctest::Approx(b.x2));
  CHECK_THROWS_AS(rescale_box(b, 0.0), std::invalid_argument);
}
