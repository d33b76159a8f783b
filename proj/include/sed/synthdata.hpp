#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sed/geometry.hpp"
#include "sed/image.hpp"

namespace sed {

struct LabeledBox {
  Box box;
  int class_id = 0;
};

// Shape classes, in class_id order.
enum ShapeClass : int { kCircle = 0, kSquare = 1, kTriangle = 2 };
inline constexpr int kNumClasses = 3;

struct Scene {
  Image image;
  std::vector<LabeledBox> boxes;
  uint64_t scene_id = 0;
  uint64_t seed = 0;
};

// Image-only view handed to the training loop for unlabeled data; ground
// truth stays with the analysis side.
struct UnlabeledScene {
  Image image;
  uint64_t scene_id = 0;
};

struct DatasetConfig {
  int image_size = 128;
  int num_train_scenes = 600;
  int num_test_scenes = 200;
  double labeled_fraction = 0.10;
  int max_objects = 3;
  double min_object_size = 8.0;
  double max_object_size = 96.0;
  int max_clutter = 3;
  double noise_amplitude = 0.02;
  uint64_t master_seed = 0;

  void validate() const;
};

struct Dataset {
  std::vector<Scene> labeled;
  std::vector<Scene> unlabeled;  // ground truth retained for analysis only
  std::vector<Scene> test;
};

// Pure function of (seed, cfg); objects are axis-aligned shapes with LxL
// tight bounding boxes, side length log-uniform in [min, max].
Scene generate_scene(uint64_t seed, const DatasetConfig& cfg);

Dataset generate_dataset(const DatasetConfig& cfg);

inline UnlabeledScene strip_labels(const Scene& s) { return {s.image, s.scene_id}; }

// CDF over sqrt(box area) of all ground-truth boxes: (sqrt_area, cum_fraction),
// nondecreasing, ending at 1.
std::vector<std::pair<double, double>> size_cdf(const std::vector<Scene>& scenes);

}  // namespace sed
