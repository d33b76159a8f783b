#pragma once

#include <cstdint>
#include <vector>

#include "sed/image.hpp"
#include "sed/rng.hpp"
#include "sed/synthdata.hpp"

namespace sed {

// Geometric part of weak augmentation, recorded for exact replay. The resized
// content sits at the top-left of a fixed-size canvas (the original dims),
// padded with the source image mean, so every augmented image keeps
// stride-divisible dimensions.
struct AugRecord {
  bool flip = false;
  double resize_factor = 1.0;
  uint64_t rng_seed = 0;
};

struct CutoutPass {
  double prob;
  double scale_min, scale_max;  // erased area as a fraction of image area
  double ratio_min, ratio_max;  // aspect ratio (w/h) range, sampled log-uniform
};

struct AugmentConfig {
  double weak_resize_min = 0.8;
  double weak_resize_max = 1.0;
  double flip_prob = 0.5;

  double jitter_prob = 0.8;
  double jitter_min = 0.6, jitter_max = 1.4;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  double blur_sigma_min = 0.1, blur_sigma_max = 2.0;
  std::vector<CutoutPass> cutouts = {
      {0.7, 0.05, 0.2, 0.3, 3.3},
      {0.5, 0.02, 0.2, 0.1, 6.0},
      {0.3, 0.02, 0.2, 0.05, 8.0},
  };
  // < 0 means auto: the trainer fills with the labeled-set mean intensity;
  // standalone strong_augment falls back to the input image mean.
  double cutout_fill = -1.0;

  void validate() const;
};

struct WeakAugment {
  Image image;
  std::vector<LabeledBox> boxes;
  AugRecord record;
};

WeakAugment weak_augment(const Scene& scene, Rng& rng, const AugmentConfig& cfg);

// Image-only variant for the unlabeled branch (no ground truth involved).
std::pair<Image, AugRecord> weak_augment_image(const Image& img, Rng& rng, const AugmentConfig& cfg);

// Exact replay of a recorded weak geometry.
Image apply_weak_record(const Image& img, const AugRecord& rec);
std::vector<LabeledBox> apply_weak_record(const std::vector<LabeledBox>& boxes, int canvas_w,
                                          const AugRecord& rec);

// Color jitter -> grayscale -> Gaussian blur -> three Cutout passes, in that
// order; no geometric change; output clamped to [0, 1].
Image strong_augment(const Image& img, Rng& rng, const AugmentConfig& cfg);

// Area-average downsampling by 2^s per axis; dims must be divisible by 2^s.
Image downsample(const Image& img, int s);

}  // namespace sed
