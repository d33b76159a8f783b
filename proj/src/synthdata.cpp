#include "sed/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "sed/rng.hpp"

namespace sed {

void DatasetConfig::validate() const {
  if (image_size < 32 || image_size % 32 != 0)
    throw std::invalid_argument("dataset: image_size must be a positive multiple of 32");
  if (num_train_scenes < 1) throw std::invalid_argument("dataset: num_train_scenes must be >= 1");
  if (num_test_scenes < 0) throw std::invalid_argument("dataset: num_test_scenes must be >= 0");
  if (!(labeled_fraction > 0.0) || labeled_fraction > 1.0)
    throw std::invalid_argument("dataset: labeled_fraction must be in (0, 1]");
  if (max_objects < 1) throw std::invalid_argument("dataset: max_objects must be >= 1");
  if (!(min_object_size >= 2.0) || !(max_object_size >= min_object_size))
    throw std::invalid_argument("dataset: bad object size range");
  if (max_object_size > image_size - 2)
    throw std::invalid_argument("dataset: object size range exceeds image");
  if (max_clutter < 0) throw std::invalid_argument("dataset: max_clutter must be >= 0");
  if (noise_amplitude < 0) throw std::invalid_argument("dataset: noise_amplitude must be >= 0");
}

namespace {

// Hues distinct for color cues, luminances spread out so grayscale views
// stay class-separable.
constexpr double kClassColors[kNumClasses][3] = {
    {0.95, 0.80, 0.35},  // circle: bright amber, luma ~0.79
    {0.20, 0.60, 0.95},  // square: mid teal-blue, luma ~0.52
    {0.45, 0.10, 0.45},  // triangle: dark purple, luma ~0.24
};

bool inside_shape(int cls, double px, double py, const Box& b) {
  switch (cls) {
    case kCircle: {
      const double r = 0.5 * b.width();
      const double dx = px - b.cx(), dy = py - b.cy();
      return dx * dx + dy * dy <= r * r;
    }
    case kSquare:
      return px >= b.x1 && px <= b.x2 && py >= b.y1 && py <= b.y2;
    case kTriangle: {
      // apex at top-center, base along the bottom edge
      if (py < b.y1 || py > b.y2 || b.height() <= 0) return false;
      const double t = (py - b.y1) / b.height();  // 0 at apex row, 1 at base
      const double half = 0.5 * b.width() * t;
      return px >= b.cx() - half && px <= b.cx() + half;
    }
    default:
      return false;
  }
}

void paint_shape(Image& img, int cls, const Box& b, const double color[3]) {
  const int y0 = std::max(0, static_cast<int>(std::floor(b.y1)));
  const int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(b.y2)));
  const int x0 = std::max(0, static_cast<int>(std::floor(b.x1)));
  const int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(b.x2)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (inside_shape(cls, x + 0.5, y + 0.5, b))
        for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
}

}  // namespace

Scene generate_scene(uint64_t seed, const DatasetConfig& cfg) {
  cfg.validate();
  Rng rng(seed);
  const int S = cfg.image_size;
  Scene scene;
  scene.seed = seed;
  scene.image = Image(S, S);

  // Background: tinted base + linear gradient + per-pixel noise.
  double base[3], grad_dir[2];
  for (double& c : base) c = rng.uniform(0.15, 0.45);
  const double angle = rng.uniform(0.0, 2.0 * M_PI);
  grad_dir[0] = std::cos(angle);
  grad_dir[1] = std::sin(angle);
  const double grad_amp = rng.uniform(0.0, 0.10);
  for (int y = 0; y < S; ++y)
    for (int x = 0; x < S; ++x) {
      const double t = (grad_dir[0] * x + grad_dir[1] * y) / S;
      for (int c = 0; c < 3; ++c)
        scene.image.at(y, x, c) =
            base[c] + grad_amp * t + rng.uniform(-cfg.noise_amplitude, cfg.noise_amplitude);
    }

  // Clutter blobs: small unlabeled ellipses under the real objects.
  const int n_clutter = cfg.max_clutter > 0 ? rng.uniform_int(0, cfg.max_clutter) : 0;
  for (int i = 0; i < n_clutter; ++i) {
    const double rx = rng.uniform(2.0, 6.0), ry = rng.uniform(2.0, 6.0);
    const double cx = rng.uniform(rx, S - rx), cy = rng.uniform(ry, S - ry);
    double color[3];
    for (double& c : color) c = rng.uniform(0.25, 0.75);
    const int y0 = std::max(0, static_cast<int>(cy - ry)), y1 = std::min(S - 1, static_cast<int>(cy + ry));
    const int x0 = std::max(0, static_cast<int>(cx - rx)), x1 = std::min(S - 1, static_cast<int>(cx + rx));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double dx = (x + 0.5 - cx) / rx, dy = (y + 0.5 - cy) / ry;
        if (dx * dx + dy * dy <= 1.0)
          for (int c = 0; c < 3; ++c) scene.image.at(y, x, c) = color[c];
      }
  }

  // Objects: LxL shapes, side log-uniform, limited mutual overlap.
  const int n_objects = rng.uniform_int(1, cfg.max_objects);
  for (int i = 0; i < n_objects; ++i) {
    const int cls = rng.uniform_int(0, kNumClasses - 1);
    const double side =
        std::min(rng.log_uniform(cfg.min_object_size, cfg.max_object_size),
                 static_cast<double>(S - 2));
    bool placed = false;
    for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
      const double x1 = rng.uniform(1.0, S - 1.0 - side);
      const double y1 = rng.uniform(1.0, S - 1.0 - side);
      const Box b(x1, y1, x1 + side, y1 + side);
      bool ok = true;
      for (const LabeledBox& other : scene.boxes)
        if (iou(b, other.box) > 0.2) {
          ok = false;
          break;
        }
      if (!ok && !scene.boxes.empty()) continue;
      double color[3];
      for (int c = 0; c < 3; ++c)
        color[c] = std::clamp(kClassColors[cls][c] + rng.uniform(-0.12, 0.12), 0.05, 0.98);
      paint_shape(scene.image, cls, b, color);
      scene.boxes.push_back({b, cls});
      placed = true;
    }
  }
  if (scene.boxes.empty()) {
    // overlap rejection exhausted every slot; place one unconditionally
    const double side = std::min(cfg.min_object_size, static_cast<double>(S - 2));
    const double x1 = rng.uniform(1.0, S - 1.0 - side), y1 = rng.uniform(1.0, S - 1.0 - side);
    const int cls = rng.uniform_int(0, kNumClasses - 1);
    const Box b(x1, y1, x1 + side, y1 + side);
    paint_shape(scene.image, cls, b, kClassColors[cls]);
    scene.boxes.push_back({b, cls});
  }

  scene.image.clamp01();
  return scene;
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  const uint64_t id_base = Rng::mix(cfg.master_seed, 0x5CE4E5ULL);
  const int n_train = cfg.num_train_scenes;
  const int n_labeled = static_cast<int>(std::lround(cfg.labeled_fraction * n_train));

  auto make = [&](int index) {
    Scene s = generate_scene(Rng::mix(cfg.master_seed, 0xDA7A5EEDULL, static_cast<uint64_t>(index)), cfg);
    s.scene_id = id_base + static_cast<uint64_t>(index);
    return s;
  };

  // Deterministic shuffle picks which train scenes carry labels.
  std::vector<int> order(static_cast<size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(Rng::mix(cfg.master_seed, 0x54117ULL));
  for (int i = n_train - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(split_rng.uniform_int(0, i))]);
  std::vector<bool> is_labeled(static_cast<size_t>(n_train), false);
  for (int i = 0; i < n_labeled; ++i) is_labeled[static_cast<size_t>(order[static_cast<size_t>(i)])] = true;

  Dataset ds;
  for (int i = 0; i < n_train; ++i) {
    Scene s = make(i);
    (is_labeled[static_cast<size_t>(i)] ? ds.labeled : ds.unlabeled).push_back(std::move(s));
  }
  for (int i = 0; i < cfg.num_test_scenes; ++i) ds.test.push_back(make(n_train + i));
  return ds;
}

std::vector<std::pair<double, double>> size_cdf(const std::vector<Scene>& scenes) {
  if (scenes.empty()) throw std::invalid_argument("size_cdf: empty scene list");
  std::vector<double> sizes;
  for (const Scene& s : scenes)
    for (const LabeledBox& lb : s.boxes) sizes.push_back(std::sqrt(lb.box.area()));
  std::sort(sizes.begin(), sizes.end());
  std::vector<std::pair<double, double>> cdf;
  const double n = static_cast<double>(sizes.size());
  for (size_t i = 0; i < sizes.size(); ++i) {
    const double frac = static_cast<double>(i + 1) / n;
    if (!cdf.empty() && cdf.back().first == sizes[i])
      cdf.back().second = frac;
    else
      cdf.emplace_back(sizes[i], frac);
  }
  return cdf;
}

}  // namespace sed
