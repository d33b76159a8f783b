#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sed/autodiff.hpp"
#include "sed/geometry.hpp"
#include "sed/image.hpp"
#include "sed/rng.hpp"
#include "sed/synthdata.hpp"

namespace sed {

using ad::ParamVector;

// Tiny pyramid detector: 2-conv stem to stride 4, two strided convs for
// strides 8/16, one shared 2-layer head. Softmax over C+1 classes (background
// last), one square anchor per location.
struct ArchConfig {
  int stem_channels1 = 8;
  int stem_channels2 = 16;
  int head_channels = 16;
  int num_levels = 3;
  int num_classes = kNumClasses;
  double anchor_base = 4.0;

  int num_outputs() const { return num_classes + 1 + 4; }
  int background_class() const { return num_classes; }
  void validate() const;
  bool operator==(const ArchConfig&) const = default;
};

struct AnchorLevel {
  int f = 0;        // pyramid index; stride = 2^f
  int stride = 0;
  int grid_h = 0, grid_w = 0;
  double anchor_side = 0;

  int num_anchors() const { return grid_h * grid_w; }
  bool operator==(const AnchorLevel&) const = default;
  Box anchor_box(int y, int x) const {
    const double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
    return Box(cx - 0.5 * anchor_side, cy - 0.5 * anchor_side,
               cx + 0.5 * anchor_side, cy + 0.5 * anchor_side);
  }
};

struct AnchorLayout {
  std::vector<AnchorLevel> levels;
  int image_h = 0, image_w = 0;

  static AnchorLayout make(int image_h, int image_w, const ArchConfig& arch);
  int total_anchors() const;
  bool operator==(const AnchorLayout&) const = default;
};

struct LevelOutput {
  int f = 0;
  int grid_h = 0, grid_w = 0;
  Tensor probs;  // [N, C+1], softmax rows
  Tensor reg;    // [N, 4]
};

struct PyramidOutput {
  std::vector<LevelOutput> levels;
  AnchorLayout layout;
};

// Per-anchor assignment: match[i] >= 0 is the gt index (foreground), -1 is
// background, -2 is ignore.
struct AssignmentMap {
  static constexpr int kBackground = -1;
  static constexpr int kIgnore = -2;
  std::vector<std::vector<int>> match;  // per level, per anchor
};

ParamVector init_params(const ArchConfig& arch, uint64_t seed);

// Graph-building forward pass; node ids stay valid for loss construction on
// the same tape.
struct ForwardGraph {
  struct Level {
    int f = 0;
    int grid_h = 0, grid_w = 0;
    ad::NodeId logits = -1;  // [N, C+1]
    ad::NodeId probs = -1;   // [N, C+1]
    ad::NodeId reg = -1;     // [N, 4]
  };
  std::vector<Level> levels;
  AnchorLayout layout;
};

ForwardGraph forward_graph(ad::Tape& tape, const ParamVector& params, const Image& img,
                           const ArchConfig& arch);

PyramidOutput forward(const ParamVector& params, const Image& img, const ArchConfig& arch);

AssignmentMap assign_targets(const AnchorLayout& layout, const std::vector<LabeledBox>& gts,
                             double fg_thr = 0.5, double bg_thr = 0.4);

// Anchor subsampling of the supervised classification set (the RPN-style
// sampled batch): keeps foreground up to fg_fraction * sample_size, fills the
// rest with randomly drawn background anchors, and marks every other
// background anchor ignore. sample_size <= 0 leaves the assignment untouched.
AssignmentMap subsample_background(const AssignmentMap& am, Rng& rng, int sample_size,
                                   double fg_fraction = 0.5);

std::vector<Detection> detections_from_output(const PyramidOutput& out, double score_thr,
                                              double nms_thr);

std::vector<Detection> predict_detections(const ParamVector& params, const Image& img,
                                          const ArchConfig& arch, double score_thr,
                                          double nms_thr);

}  // namespace sed
