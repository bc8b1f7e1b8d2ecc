#include "hiersum/decode.hpp"

#include <limits>

#include "hiersum/errors.hpp"
#include "hiersum/hier_attention.hpp"

namespace hiersum {

void GenerationConfig::validate(const ModelConfig& model) const {
  if (min_length < 1) throw ValidationError("min_length must be >= 1");
  if (max_length < min_length) throw ValidationError("max_length must be >= min_length");
  if (max_length > model.tgt_trunc) {
    throw ValidationError("max_length " + std::to_string(max_length) +
                          " exceeds the model's target truncation " +
                          std::to_string(model.tgt_trunc));
  }
  if (stop_token < 0) throw ValidationError("stop_token must be a valid token id");
}

GenerationResult greedy_generate_row(const HierTransformer& model, const MultiDocBatch& batch,
                                     int b, const GenerationConfig& config, bool trace) {
  config.validate(model.config());
  if (b < 0 || b >= batch.batch) throw ValidationError("row index out of range");

  GenerationResult result;
  const Tensor enc = model.encode_row(batch, b, trace ? &result.enc_trace : nullptr);
  const std::vector<DocSpan> spans = doc_spans_of_row(batch, b);
  const int vocab = model.config().vocab_size;

  std::vector<int> prev = {kSodId};
  while (static_cast<int>(result.tokens.size()) < config.max_length) {
    CrossRowTrace step_trace;
    const Tensor logits =
        model.decode_step(enc, spans, prev, trace ? &step_trace : nullptr);
    std::span<const double> row = logits.data();

    const bool allow_stop = static_cast<int>(result.tokens.size()) + 1 >= config.min_length;
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int id = 0; id < vocab; ++id) {
      if (id == kPadId) continue;
      if (id == config.stop_token && !allow_stop) continue;
      if (row[id] > best_score) {
        best_score = row[id];
        best = id;
      }
    }
    if (best < 0) throw ValidationError("no decodable token id");

    result.tokens.push_back(best);
    if (trace) result.step_traces.push_back(std::move(step_trace));
    if (best == config.stop_token) break;
    prev.push_back(best);
  }
  return result;
}

std::vector<GenerationResult> greedy_generate(const HierTransformer& model,
                                              const MultiDocBatch& batch,
                                              const GenerationConfig& config, bool trace) {
  std::vector<GenerationResult> out;
  out.reserve(batch.batch);
  for (int b = 0; b < batch.batch; ++b) {
    out.push_back(greedy_generate_row(model, batch, b, config, trace));
  }
  return out;
}

}  // namespace hiersum
