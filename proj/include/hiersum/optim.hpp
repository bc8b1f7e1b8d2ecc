#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hiersum/tensor.hpp"

namespace hiersum {

struct TrainConfig {
  double learning_rate = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup_steps = 0;
  double weight_decay = 0.0;
  /// Global-norm gradient clip applied by the training loop; 0 disables.
  double grad_clip = 1.0;
  int batch_size = 8;
  int max_steps = 1000;
  uint64_t seed = 0;
  /// Evaluate and checkpoint every this many steps; 0 means only at the end.
  int eval_every = 0;
  std::string checkpoint_path;
  std::string metrics_path;

  void validate() const;
};

struct OptimizerState {
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  std::map<std::string, Moments> moments;
  int64_t step = 0;
};

/// One bias-corrected Adam update over every parameter's accumulated
/// gradient. Scans all gradients first; a non-finite entry aborts the step
/// before any parameter changes.
void adam_step(std::vector<std::pair<std::string, Tensor>>& params, OptimizerState& state,
               const TrainConfig& config);

double global_grad_norm(std::span<const std::pair<std::string, Tensor>> params);

/// Scales all gradients so the global norm is at most max_norm.
/// Returns the pre-clip norm.
double clip_gradients(std::vector<std::pair<std::string, Tensor>>& params, double max_norm);

}  // namespace hiersum
