#include <doctest.h>

#include <stdexcept>

#include <cmath>

#include "sed/autodiff.hpp"
#include "sed/rng.hpp"

using namespace sed;
using ad::ParamVector;
using ad::Tape;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (double& v : t.v) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("sum of squares gradient is 2x") {
  Rng rng(1);
  ParamVector p;
  p["w"] = random_tensor({3, 4}, rng);
  Tape tape;
  const auto w = tape.param("w", p["w"]);
  const auto loss = tape.sum_all(tape.square(w));
  const ParamVector g = tape.backward(loss);
  for (int64_t i = 0; i < p["w"].size(); ++i)
    CHECK(g.at("w")[i] == doctest::Approx(2.0 * p["w"][i]));
}

TEST_CASE("stop_grad blocks gradient but keeps value") {
  Rng rng(2);
  ParamVector p;
  p["w"] = random_tensor({5}, rng);
  Tape tape;
  const auto w = tape.param("w", p["w"]);
  const auto loss = tape.sum_all(tape.mul(tape.stop_grad(w), w));  // sum sg(w)*w
  CHECK(tape.scalar(loss) == doctest::Approx([&] {
          double s = 0;
          for (double v : p["w"].v) s += v * v;
          return s;
        }()));
  const ParamVector g = tape.backward(loss);
  // d/dw of sum c*w with c frozen at w: exactly w (not 2w)
  for (int64_t i = 0; i < 5; ++i) CHECK(g.at("w")[i] == doctest::Approx(p["w"][i]));
}

TEST_CASE("gradient of a pure stop-grad branch is zero") {
  Rng rng(3);
  ParamVector p;
  p["w"] = random_tensor({4}, rng);
  Tape tape;
  const auto w = tape.param("w", p["w"]);
  const auto loss = tape.sum_all(tape.square(tape.stop_grad(w)));
  const ParamVector g = tape.backward(loss);
  for (int64_t i = 0; i < 4; ++i) CHECK(g.at("w")[i] == 0.0);
}

TEST_CASE("elementwise and reduction ops match finite differences") {
  Rng rng(4);
  ParamVector p;
  p["a"] = random_tensor({2, 6}, rng, 0.1, 2.0);
  p["b"] = random_tensor({2, 6}, rng, 0.1, 2.0);

  auto f = [](const ParamVector& q) {
    Tape t;
    const auto a = t.param("a", q.at("a"));
    const auto b = t.param("b", q.at("b"));
    const auto expr = t.mul(t.log_clamped(a, 1e-8), t.sub(t.scale(b, 1.7), t.square(a)));
    return t.scalar(t.sum_all(expr));
  };

  Tape tape;
  const auto a = tape.param("a", p["a"]);
  const auto b = tape.param("b", p["b"]);
  const auto expr = tape.mul(tape.log_clamped(a, 1e-8), tape.sub(tape.scale(b, 1.7), tape.square(a)));
  const ParamVector g = tape.backward(tape.sum_all(expr));
  CHECK(ad::finite_diff_max_rel_err(p, f, g) < 1e-6);
}

TEST_CASE("softmax and row losses match finite differences") {
  Rng rng(5);
  const int N = 7, K = 4;
  ParamVector p;
  p["z"] = random_tensor({N, K}, rng, -2, 2);

  auto target = std::make_shared<Tensor>(Tensor({N, K}));
  for (int i = 0; i < N; ++i) {
    double s = 0;
    for (int k = 0; k < K; ++k) {
      (*target)[i * K + k] = rng.uniform(0.05, 1.0);
      s += (*target)[i * K + k];
    }
    for (int k = 0; k < K; ++k) (*target)[i * K + k] /= s;
  }
  auto weights = std::make_shared<std::vector<double>>();
  for (int i = 0; i < N; ++i) weights->push_back(rng.uniform(0.1, 1.0));
  auto cls = std::make_shared<std::vector<int>>();
  for (int i = 0; i < N; ++i) cls->push_back(i % 2 == 0 ? rng.uniform_int(0, K - 1) : -1);

  auto build = [&](Tape& t, const ParamVector& q) {
    const auto z = t.param("z", q.at("z"));
    const auto probs = t.softmax_rows(z);
    const auto kl = t.kl_rows(probs, target, weights, 1e-8);
    const auto ce = t.ce_rows(probs, cls, weights, 1e-8);
    const auto l2 = t.l2_rows(probs, target, weights);
    return t.add_n({kl, ce, l2});
  };
  auto f = [&](const ParamVector& q) {
    Tape t;
    return t.scalar(build(t, q));
  };
  Tape tape;
  const auto loss = build(tape, p);
  const ParamVector g = tape.backward(loss);
  CHECK(ad::finite_diff_max_rel_err(p, f, g) < 1e-6);
}

TEST_CASE("conv2d matches finite differences (stride 1 and 2)") {
  Rng rng(6);
  for (int stride : {1, 2}) {
    ParamVector p;
    p["x"] = random_tensor({2, 6, 6}, rng);
    p["w"] = random_tensor({3, 2, 3, 3}, rng);
    p["b"] = random_tensor({3}, rng);
    auto build = [&](Tape& t, const ParamVector& q) {
      const auto x = t.param("x", q.at("x"));
      const auto w = t.param("w", q.at("w"));
      const auto b = t.param("b", q.at("b"));
      return t.sum_all(t.square(t.relu(t.conv2d(x, w, b, stride, 1))));
    };
    auto f = [&](const ParamVector& q) {
      Tape t;
      return t.scalar(build(t, q));
    };
    Tape tape;
    const ParamVector g = tape.backward(build(tape, p));
    CHECK(ad::finite_diff_max_rel_err(p, f, g, 1e-6) < 1e-5);
  }
}

TEST_CASE("conv2d known value") {
  // 1x2x2 input, 1x1x2x2 kernel, stride 1, pad 0 -> single output element
  Tape t;
  const auto x = t.constant(Tensor({1, 2, 2}, {1, 2, 3, 4}));
  const auto w = t.param("w", Tensor({1, 1, 2, 2}, {10, 20, 30, 40}));
  const auto b = t.param("b", Tensor({1}, {5}));
  const auto y = t.conv2d(x, w, b, 1, 0);
  CHECK(t.val(y).shape == std::vector<int>{1, 1, 1});
  CHECK(t.val(y)[0] == doctest::Approx(10 + 40 + 90 + 160 + 5));
}

TEST_CASE("chw_to_rows roundtrip layout") {
  // channels [A*K]: value encodes (channel, y, x)
  const int C = 8, H = 2, W = 3, A = 1, K = 4;
  Tensor x({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int xx = 0; xx < W; ++xx) x[(c * H + y) * W + xx] = c * 100 + y * 10 + xx;
  Tape t;
  const auto xc = t.constant(x);
  const auto rows = t.chw_to_rows(xc, A, K, 4);
  const Tensor& r = t.val(rows);
  CHECK(r.shape == std::vector<int>{H * W * A, K});
  // row for (y=1, x=2), col k=3 -> channel 4+3=7
  CHECK(r[(1 * W + 2) * K + 3] == doctest::Approx(700 + 10 + 2));
}

TEST_CASE("backward rejects non-finite loss") {
  Tape t;
  const auto c = t.param("w", Tensor({1}, {0.0}));
  const auto bad = t.log_clamped(c, 0.0);  // ln(0) = -inf with a zero clamp
  CHECK_THROWS_AS(t.backward(bad), std::runtime_error);
}
