#pragma once

#include <vector>

#include "hiersum/data.hpp"
#include "hiersum/model.hpp"

namespace hiersum {

struct GenerationConfig {
  int max_length = 64;
  int min_length = 1;
  int stop_token = kEosId;

  /// Requires 1 <= min_length <= max_length <= model tgt_trunc.
  void validate(const ModelConfig& model) const;
};

/// One decoded row. tokens never contains PAD and holds the stop token at
/// most once, as its final element. With tracing on, step_traces[i] is the
/// full cross-attention record of the prefix that produced tokens[i] (its
/// last row belongs to tokens[i]) and enc_trace holds the encoder
/// self-attention of the source row.
struct GenerationResult {
  std::vector<int> tokens;
  std::vector<CrossRowTrace> step_traces;
  EncRowTrace enc_trace;
};

GenerationResult greedy_generate_row(const HierTransformer& model, const MultiDocBatch& batch,
                                     int b, const GenerationConfig& config, bool trace = false);

std::vector<GenerationResult> greedy_generate(const HierTransformer& model,
                                              const MultiDocBatch& batch,
                                              const GenerationConfig& config, bool trace = false);

}  // namespace hiersum
