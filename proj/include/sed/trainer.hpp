#pragma once

#include <optional>
#include <string>
#include <vector>

#include "sed/autodiff.hpp"
#include "sed/checkpoint.hpp"
#include "sed/config.hpp"
#include "sed/detector.hpp"
#include "sed/losses.hpp"
#include "sed/synthdata.hpp"

namespace sed {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Training-side view of the data. Unlabeled scenes arrive without ground
// truth; evaluation scenes are used only for periodic metrics.
struct TrainerData {
  std::vector<Scene> labeled;
  std::vector<UnlabeledScene> unlabeled;
  std::vector<Scene> eval_scenes;
};

struct OptimizerState {
  ad::ParamVector momentum;  // buffers matching the parameter shapes
  double lr = 0.0;
};

// v <- momentum * v + (grad + weight_decay * param); param <- param - lr * v
void sgd_step(ad::ParamVector& params, const ad::ParamVector& grads, OptimizerState& opt,
              double momentum, double weight_decay);

struct TrainResult {
  std::string checkpoint_path;
  std::string metrics_path;
  int64_t iterations_run = 0;
};

// Full loop: burn-in supervised phase, then joint labeled/unlabeled steps
// with scale-consistency and self-distillation, SGD + EMA teacher, JSONL
// metrics, checkpointing. Resumable from <out_dir>/checkpoint_latest.sedckpt.
TrainResult train(const RunConfig& cfg, const TrainerData& data, const std::string& out_dir,
                  bool resume = false);

}  // namespace sed
