#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hiersum/data.hpp"
#include "hiersum/hier_attention.hpp"
#include "hiersum/masks.hpp"
#include "hiersum/tensor.hpp"

namespace hiersum {

struct ModelConfig {
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  int vocab_size = 0;
  int max_positions = 64;
  int src_trunc = 4096;
  int tgt_trunc = 1024;
  bool use_sod = true;
  bool hier_enc = true;
  bool hier_dec = true;
  bool pos_restart = true;
  double dropout = 0.0;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

/// Encoder self-attention weights of one row: weights[layer][head] is a
/// row-major [len, len] matrix.
struct EncRowTrace {
  int len = 0;
  std::vector<std::vector<std::vector<double>>> weights;
};

/// Decoder cross-attention record of one row. weights[layer][head] is
/// row-major [t_len, k_len]; doc_scaling[layer][head] is row-major
/// [t_len, n_docs] and empty when standard cross-attention ran.
struct CrossRowTrace {
  int t_len = 0;
  int k_len = 0;
  int n_docs = 0;
  std::vector<std::vector<std::vector<double>>> weights;
  std::vector<std::vector<std::vector<double>>> doc_scaling;
};

/// Encoder-decoder transformer over multi-document rows. Rows are
/// processed at their unpadded length, one at a time; batching happens in
/// the loss, which averages over every label token of the batch.
class HierTransformer {
 public:
  HierTransformer(ModelConfig config, uint64_t seed);

  const ModelConfig& config() const { return config_; }

  std::vector<std::pair<std::string, Tensor>>& named_params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& named_params() const { return params_; }
  Tensor param(const std::string& name) const;
  int64_t param_count() const;
  static int64_t expected_param_count(const ModelConfig& config);
  void zero_grads();

  /// Hidden states [len, d_model] of row b's unpadded prefix.
  Tensor encode_row(const MultiDocBatch& batch, int b, EncRowTrace* trace = nullptr) const;

  /// Teacher-forced logits [t, vocab] for every prefix position.
  Tensor decoder_logits(const Tensor& encoder_states, std::span<const DocSpan> spans,
                        std::span<const int> prev_tokens, CrossRowTrace* trace = nullptr) const;

  /// Next-token logits [vocab] after the last of prev_tokens.
  Tensor decode_step(const Tensor& encoder_states, std::span<const DocSpan> spans,
                     std::span<const int> prev_tokens, CrossRowTrace* trace = nullptr) const;

  /// Mean cross-entropy per label token over the whole batch; enables
  /// dropout for the duration of the call.
  Tensor forward_train(const MultiDocBatch& batch);

  /// Makes the next forward_train's dropout draws a pure function of s.
  void reseed_dropout(uint64_t s) { dropout_rng_.seed(s); }

 private:
  struct AttnParams {
    Tensor wq, wk, wv, wo, bq, bk, bv, bo;
  };
  struct LnParams {
    Tensor g, b;
  };
  struct FfParams {
    Tensor w1, b1, w2, b2;
  };
  struct EncLayer {
    AttnParams attn;
    LnParams ln1;
    FfParams ff;
    LnParams ln2;
  };
  struct DecLayer {
    AttnParams self;
    LnParams ln1;
    AttnParams cross;
    LnParams ln2;
    FfParams ff;
    LnParams ln3;
  };

  Tensor register_param(const std::string& name, Tensor t);
  Tensor embed(std::span<const int> ids, std::span<const int> positions) const;
  Tensor maybe_dropout(Tensor x) const;
  Tensor attention(const AttnParams& p, const Tensor& queries, const Tensor& memory,
                   const AttentionMaskMatrix* mask, std::span<const DocSpan> spans,
                   std::vector<std::vector<double>>* head_weights,
                   std::vector<std::vector<double>>* head_scaling) const;
  Tensor feed_forward(const FfParams& p, const Tensor& x) const;

  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> params_;
  Tensor tok_emb_;
  Tensor pos_emb_;
  std::vector<EncLayer> enc_layers_;
  std::vector<DecLayer> dec_layers_;

  mutable bool training_ = false;
  mutable std::mt19937_64 dropout_rng_;
};

}  // namespace hiersum
