#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hiersum/data.hpp"
#include "hiersum/model.hpp"

namespace hiersum {

/// Attention weights recorded for one example at its unpadded source
/// length k: encoder self-attention per layer/head as row-major [k, k],
/// and for each generated token the cross-attention row per layer/head.
struct AttentionTrace {
  int k = 0;
  int n_enc_layers = 0;
  int n_dec_layers = 0;
  int n_heads = 0;
  std::vector<std::vector<std::vector<double>>> encoder_self;
  std::vector<std::vector<std::vector<std::vector<double>>>> decoder_cross;
  std::vector<int> doc_index;
  std::vector<uint8_t> sod_mask;
  std::vector<uint8_t> pad_mask;

  int n_docs() const;
};

/// Every attention row must sum to 1 within tol.
void validate_trace(const AttentionTrace& trace, double tol = 1e-6);

AttentionTrace build_trace(const MultiDocBatch& batch, int b, const EncRowTrace& enc,
                           const std::vector<CrossRowTrace>& steps);

void save_trace(const AttentionTrace& trace, const std::string& path);
AttentionTrace load_trace(const std::string& path);

}  // namespace hiersum
