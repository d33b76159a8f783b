#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "sed/augment.hpp"
#include "sed/detector.hpp"
#include "sed/ema.hpp"
#include "sed/losses.hpp"
#include "sed/synthdata.hpp"

namespace sed {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr int kConfigSchemaVersion = 1;

struct TrainConfig {
  int iterations = 3000;
  int burn_in_iterations = 300;
  int batch_labeled = 8;    // n_s
  int batch_unlabeled = 8;  // n_u
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<int> lr_milestones = {2400};
  double lr_gamma = 0.1;

  double lambda_scale = 0.5;
  double lambda_distill = 1.0;
  int scale_max_exponent = 1;  // S; s drawn uniform from {1..S}
  int reweight_bins = 10;      // M
  bool reweight_scale = true;
  bool reweight_distill = true;
  DistillMode distill_mode = DistillMode::kSoft;
  double distill_tau = 0.7;
  double distill_tau_bg = 0.3;

  EmaSchedule ema;

  double fg_iou_threshold = 0.5;
  double bg_iou_threshold = 0.4;
  // RPN-style anchor batch for the supervised classification term; 0 keeps
  // every background anchor in the mean.
  int cls_sample_size = 64;
  double cls_sample_fg_fraction = 0.5;
  double eval_score_threshold = 0.05;
  double eval_nms_threshold = 0.5;
  int eval_interval = 0;        // 0 = final eval only
  int checkpoint_interval = 0;  // 0 = final checkpoint only

  uint64_t master_seed = 0;

  void validate() const;
};

// Everything a run needs, parsed from one flat key=value file.
struct RunConfig {
  DatasetConfig data;
  ArchConfig arch;
  AugmentConfig augment;
  TrainConfig train;

  void validate() const;
};

// Parses `key = value` lines ('#' comments). Unknown keys, type errors and
// schema version mismatches are rejected with the offending key named.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// Applies `key=value` overrides on top of a parsed config (CLI --set).
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Serializes with every schema key present, in schema order.
std::string config_to_text(const RunConfig& cfg);

std::vector<std::string> config_keys();

}  // namespace sed
