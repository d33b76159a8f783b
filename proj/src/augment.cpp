#include "sed/augment.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace sed {

void AugmentConfig::validate() const {
  if (!(weak_resize_min > 0) || weak_resize_min > weak_resize_max || weak_resize_max > 1.0)
    throw std::invalid_argument("augment: weak resize range must satisfy 0 < min <= max <= 1");
  auto prob_ok = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob_ok(flip_prob) || !prob_ok(jitter_prob) || !prob_ok(grayscale_prob) || !prob_ok(blur_prob))
    throw std::invalid_argument("augment: probabilities must be in [0, 1]");
  for (const CutoutPass& c : cutouts)
    if (!prob_ok(c.prob) || !(c.scale_min > 0) || c.scale_min > c.scale_max ||
        !(c.ratio_min > 0) || c.ratio_min > c.ratio_max)
      throw std::invalid_argument("augment: bad cutout parameters");
}

Image apply_weak_record(const Image& img, const AugRecord& rec) {
  const int W = img.w, H = img.h;
  const int cw = static_cast<int>(std::lround(rec.resize_factor * W));
  const int ch = static_cast<int>(std::lround(rec.resize_factor * H));
  Image out(H, W, img.mean());
  const Image content = area_resample(img, ch, cw);
  for (int y = 0; y < ch; ++y)
    for (int x = 0; x < cw; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = content.at(y, x, c);
  if (rec.flip) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W / 2; ++x)
        for (int c = 0; c < 3; ++c) std::swap(out.at(y, x, c), out.at(y, W - 1 - x, c));
  }
  return out;
}

std::vector<LabeledBox> apply_weak_record(const std::vector<LabeledBox>& boxes, int canvas_w,
                                          const AugRecord& rec) {
  std::vector<LabeledBox> out;
  out.reserve(boxes.size());
  for (const LabeledBox& lb : boxes) {
    Box b = rescale_box(lb.box, rec.resize_factor);
    if (rec.flip) b = Box(canvas_w - b.x2, b.y1, canvas_w - b.x1, b.y2);
    out.push_back({b, lb.class_id});
  }
  return out;
}

static AugRecord draw_weak_record(Rng& rng, const AugmentConfig& cfg) {
  AugRecord rec;
  rec.resize_factor = rng.uniform(cfg.weak_resize_min, cfg.weak_resize_max);
  rec.flip = rng.bernoulli(cfg.flip_prob);
  return rec;
}

WeakAugment weak_augment(const Scene& scene, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  const AugRecord rec = draw_weak_record(rng, cfg);
  return {apply_weak_record(scene.image, rec), apply_weak_record(scene.boxes, scene.image.w, rec), rec};
}

std::pair<Image, AugRecord> weak_augment_image(const Image& img, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  const AugRecord rec = draw_weak_record(rng, cfg);
  return {apply_weak_record(img, rec), rec};
}

namespace {

void color_jitter(Image& img, Rng& rng, const AugmentConfig& cfg) {
  const double fb = rng.uniform(cfg.jitter_min, cfg.jitter_max);
  const double fc = rng.uniform(cfg.jitter_min, cfg.jitter_max);
  const double fs = rng.uniform(cfg.jitter_min, cfg.jitter_max);
  // brightness
  for (double& v : img.data) v *= fb;
  // contrast about the gray mean
  double mean = 0.0;
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      mean += 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
  mean /= static_cast<double>(img.h) * img.w;
  for (double& v : img.data) v = (v - mean) * fc + mean;
  // saturation toward per-pixel gray
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const double g = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = g + (img.at(y, x, c) - g) * fs;
    }
}

void grayscale(Image& img) {
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x) {
      const double g = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = g;
    }
}

void gaussian_blur(Image& img, double sigma) {
  // kernel: smallest odd length >= 6*sigma, capped at the largest odd value
  // <= image_size / 8 (keeps the footprint proportional on small images)
  int k = static_cast<int>(std::ceil(6.0 * sigma));
  if (k % 2 == 0) ++k;
  int cap = std::min(img.h, img.w) / 8;
  if (cap % 2 == 0) --cap;
  k = std::max(1, std::min(k, cap));
  if (k <= 1) return;
  const int r = k / 2;
  std::vector<double> kern(static_cast<size_t>(k));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    kern[static_cast<size_t>(i + r)] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    sum += kern[static_cast<size_t>(i + r)];
  }
  for (double& v : kern) v /= sum;

  Image tmp = img;
  // horizontal pass, replicate borders
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += kern[static_cast<size_t>(i + r)] * img.at(y, std::clamp(x + i, 0, img.w - 1), c);
        tmp.at(y, x, c) = acc;
      }
  // vertical pass
  for (int y = 0; y < img.h; ++y)
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += kern[static_cast<size_t>(i + r)] * tmp.at(std::clamp(y + i, 0, img.h - 1), x, c);
        img.at(y, x, c) = acc;
      }
}

void cutout(Image& img, Rng& rng, const CutoutPass& pass, double fill) {
  const double area = rng.uniform(pass.scale_min, pass.scale_max) * img.h * img.w;
  const double ratio = std::exp(rng.uniform(std::log(pass.ratio_min), std::log(pass.ratio_max)));
  int cw = std::max(1, static_cast<int>(std::lround(std::sqrt(area * ratio))));
  int ch = std::max(1, static_cast<int>(std::lround(std::sqrt(area / ratio))));
  cw = std::min(cw, img.w);
  ch = std::min(ch, img.h);
  const int x0 = rng.uniform_int(0, img.w - cw);
  const int y0 = rng.uniform_int(0, img.h - ch);
  for (int y = y0; y < y0 + ch; ++y)
    for (int x = x0; x < x0 + cw; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = fill;
}

}  // namespace

Image strong_augment(const Image& img, Rng& rng, const AugmentConfig& cfg) {
  cfg.validate();
  const double fill = cfg.cutout_fill < 0 ? img.mean() : cfg.cutout_fill;
  Image out = img;
  if (rng.bernoulli(cfg.jitter_prob)) color_jitter(out, rng, cfg);
  if (rng.bernoulli(cfg.grayscale_prob)) grayscale(out);
  if (rng.bernoulli(cfg.blur_prob)) gaussian_blur(out, rng.uniform(cfg.blur_sigma_min, cfg.blur_sigma_max));
  for (const CutoutPass& pass : cfg.cutouts)
    if (rng.bernoulli(pass.prob)) cutout(out, rng, pass, fill);
  out.clamp01();
  return out;
}

Image downsample(const Image& img, int s) {
  if (s < 1) throw std::invalid_argument("downsample: s must be >= 1");
  const int f = 1 << s;
  if (img.h % f != 0 || img.w % f != 0)
    throw std::invalid_argument("downsample: dims not divisible by 2^s");
  return area_resample(img, img.h / f, img.w / f);
}

}  // namespace sed
