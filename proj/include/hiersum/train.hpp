#pragma once

#include <cstdint>
#include <vector>

#include "hiersum/data.hpp"
#include "hiersum/decode.hpp"
#include "hiersum/model.hpp"
#include "hiersum/optim.hpp"
#include "hiersum/rouge.hpp"
#include "hiersum/vocab.hpp"

namespace hiersum {

struct EvalMetrics {
  double loss = 0.0;
  double token_accuracy = 0.0;
  double exact_match = 0.0;
  RougeScore rouge;
  int n_examples = 0;
};

struct TrainResult {
  /// Training-batch loss before each update; step_losses[i] belongs to
  /// global step start_step + i.
  std::vector<double> step_losses;
  int64_t start_step = 0;
  EvalMetrics final_eval;
};

/// Teacher-forced loss and token accuracy plus greedy-decode exact match
/// and ROUGE over examples.
EvalMetrics evaluate(const HierTransformer& model, std::span<const MultiDocExample> examples,
                     const Vocabulary& vocab, const GenerationConfig& gen, int batch_size);

/// Runs Adam updates from opt.step to config.max_steps. Data order is a
/// per-epoch shuffle derived from (config.seed, epoch), so a run resumed
/// from a checkpoint sees the same batches as an uninterrupted one.
/// Evaluates and checkpoints every config.eval_every steps and at the end;
/// appends one JSON line per step to config.metrics_path when set.
TrainResult train_loop(HierTransformer& model, OptimizerState& opt,
                       std::span<const MultiDocExample> train,
                       std::span<const MultiDocExample> heldout, const Vocabulary& vocab,
                       const TrainConfig& config);

/// The index order train_loop visits in the given epoch.
std::vector<int> epoch_order(int n, uint64_t seed, int64_t epoch);

}  // namespace hiersum
