#include "hiersum/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_map>

#include "hiersum/errors.hpp"

namespace hiersum {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ValidationError(std::string("model config: ") + name + " must be >= 1");
  };
  positive(d_model, "d_model");
  positive(n_heads, "n_heads");
  positive(d_ff, "d_ff");
  positive(n_enc_layers, "n_enc_layers");
  positive(n_dec_layers, "n_dec_layers");
  positive(vocab_size, "vocab_size");
  positive(max_positions, "max_positions");
  positive(src_trunc, "src_trunc");
  positive(tgt_trunc, "tgt_trunc");
  if (d_model % n_heads != 0) {
    throw ValidationError("model config: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
  }
  if ((hier_enc || hier_dec) && !use_sod) {
    throw ValidationError(
        "model config: hierarchical encoder/decoder attention requires use_sod");
  }
  if (dropout < 0.0 || dropout >= 1.0) {
    throw ValidationError("model config: dropout must be in [0, 1)");
  }
}

Tensor HierTransformer::register_param(const std::string& name, Tensor t) {
  params_.emplace_back(name, t);
  return t;
}

HierTransformer::HierTransformer(ModelConfig config, uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  dropout_rng_.seed(seed + 0x5eed);

  auto normal_init = [&rng](std::vector<int> shape, double stddev) {
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t = Tensor::zeros(std::move(shape), true);
    for (double& v : t.data()) v = dist(rng);
    return t;
  };
  // Uniform bounds chosen from fan-in + fan-out so attention scores start
  // near unit variance.
  auto affine_init = [&rng](int fan_in, int fan_out) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    Tensor t = Tensor::zeros({fan_in, fan_out}, true);
    for (double& v : t.data()) v = dist(rng);
    return t;
  };

  const int d = config_.d_model;
  tok_emb_ = register_param("tok_emb", normal_init({config_.vocab_size, d}, 0.02));
  pos_emb_ = register_param("pos_emb", normal_init({config_.max_positions, d}, 0.02));

  auto make_attn = [&](const std::string& prefix) {
    AttnParams p;
    p.wq = register_param(prefix + ".wq", affine_init(d, d));
    p.wk = register_param(prefix + ".wk", affine_init(d, d));
    p.wv = register_param(prefix + ".wv", affine_init(d, d));
    p.wo = register_param(prefix + ".wo", affine_init(d, d));
    p.bq = register_param(prefix + ".bq", Tensor::zeros({d}, true));
    p.bk = register_param(prefix + ".bk", Tensor::zeros({d}, true));
    p.bv = register_param(prefix + ".bv", Tensor::zeros({d}, true));
    p.bo = register_param(prefix + ".bo", Tensor::zeros({d}, true));
    return p;
  };
  auto make_ln = [&](const std::string& prefix) {
    LnParams p;
    p.g = register_param(prefix + ".g", Tensor::full({d}, 1.0, true));
    p.b = register_param(prefix + ".b", Tensor::zeros({d}, true));
    return p;
  };
  auto make_ff = [&](const std::string& prefix) {
    FfParams p;
    p.w1 = register_param(prefix + ".w1", affine_init(d, config_.d_ff));
    p.b1 = register_param(prefix + ".b1", Tensor::zeros({config_.d_ff}, true));
    p.w2 = register_param(prefix + ".w2", affine_init(config_.d_ff, d));
    p.b2 = register_param(prefix + ".b2", Tensor::zeros({d}, true));
    return p;
  };

  for (int i = 0; i < config_.n_enc_layers; ++i) {
    const std::string base = "enc." + std::to_string(i);
    EncLayer layer;
    layer.attn = make_attn(base + ".attn");
    layer.ln1 = make_ln(base + ".ln1");
    layer.ff = make_ff(base + ".ff");
    layer.ln2 = make_ln(base + ".ln2");
    enc_layers_.push_back(std::move(layer));
  }
  for (int i = 0; i < config_.n_dec_layers; ++i) {
    const std::string base = "dec." + std::to_string(i);
    DecLayer layer;
    layer.self = make_attn(base + ".self");
    layer.ln1 = make_ln(base + ".ln1");
    layer.cross = make_attn(base + ".cross");
    layer.ln2 = make_ln(base + ".ln2");
    layer.ff = make_ff(base + ".ff");
    layer.ln3 = make_ln(base + ".ln3");
    dec_layers_.push_back(std::move(layer));
  }
}

Tensor HierTransformer::param(const std::string& name) const {
  for (const auto& [n, t] : params_) {
    if (n == name) return t;
  }
  throw ValidationError("unknown parameter: " + name);
}

int64_t HierTransformer::param_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

int64_t HierTransformer::expected_param_count(const ModelConfig& config) {
  const int64_t d = config.d_model, ff = config.d_ff;
  const int64_t attn = 4 * d * d + 4 * d;
  const int64_t ln = 2 * d;
  const int64_t ffn = 2 * d * ff + ff + d;
  const int64_t enc_layer = attn + ffn + 2 * ln;
  const int64_t dec_layer = 2 * attn + ffn + 3 * ln;
  return static_cast<int64_t>(config.vocab_size) * d + static_cast<int64_t>(config.max_positions) * d +
         config.n_enc_layers * enc_layer + config.n_dec_layers * dec_layer;
}

void HierTransformer::zero_grads() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Tensor HierTransformer::embed(std::span<const int> ids, std::span<const int> positions) const {
  std::vector<int> pos(positions.begin(), positions.end());
  for (int& p : pos) p %= config_.max_positions;  // table extends by repetition
  Tensor tok = embedding_lookup(tok_emb_, ids);
  Tensor loc = embedding_lookup(pos_emb_, pos);
  return add(tok, loc);
}

Tensor HierTransformer::maybe_dropout(Tensor x) const {
  if (!training_ || config_.dropout == 0.0) return x;
  return dropout(x, config_.dropout, dropout_rng_);
}

Tensor HierTransformer::attention(const AttnParams& p, const Tensor& queries,
                                  const Tensor& memory, const AttentionMaskMatrix* mask,
                                  std::span<const DocSpan> spans,
                                  std::vector<std::vector<double>>* head_weights,
                                  std::vector<std::vector<double>>* head_scaling) const {
  const int dh = config_.d_head();
  Tensor q = add_bias(matmul(queries, p.wq), p.bq);
  Tensor k = add_bias(matmul(memory, p.wk), p.bk);
  Tensor v = add_bias(matmul(memory, p.wv), p.bv);

  std::vector<Tensor> contexts;
  for (int h = 0; h < config_.n_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    Tensor scores = scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(dh));
    Tensor weights;
    if (!spans.empty()) {
      std::vector<double> scaling;
      weights = doc_scaled_softmax(scores, spans, head_scaling ? &scaling : nullptr);
      if (head_scaling) head_scaling->push_back(std::move(scaling));
    } else {
      weights = masked_softmax(scores, mask);
    }
    if (head_weights) {
      head_weights->emplace_back(weights.data().begin(), weights.data().end());
    }
    contexts.push_back(matmul(weights, vh));
  }
  Tensor ctx = concat_cols(contexts);
  return add_bias(matmul(ctx, p.wo), p.bo);
}

Tensor HierTransformer::feed_forward(const FfParams& p, const Tensor& x) const {
  Tensor h = relu(add_bias(matmul(x, p.w1), p.b1));
  return add_bias(matmul(h, p.w2), p.b2);
}

Tensor HierTransformer::encode_row(const MultiDocBatch& batch, int b, EncRowTrace* trace) const {
  if (b < 0 || b >= batch.batch) {
    throw ValidationError("encode_row: row " + std::to_string(b) + " outside batch of " +
                          std::to_string(batch.batch));
  }
  const int len = batch.src_rows[b];
  const int offset = b * batch.src_len;
  if (len < 1) throw ValidationError("encode_row: empty source row");
  if (len > config_.src_trunc) {
    throw ValidationError("encode_row: source length " + std::to_string(len) +
                          " exceeds the configured maximum of " + std::to_string(config_.src_trunc));
  }

  std::vector<int> ids(batch.input_ids.begin() + offset, batch.input_ids.begin() + offset + len);
  std::vector<int> positions(batch.position_ids.begin() + offset,
                             batch.position_ids.begin() + offset + len);
  std::vector<int> doc(batch.doc_index.begin() + offset, batch.doc_index.begin() + offset + len);
  std::vector<bool> sod(len), pad(len, false);
  for (int p = 0; p < len; ++p) sod[p] = batch.sod_mask[offset + p] != 0;

  const bool has_sod = std::any_of(sod.begin(), sod.end(), [](bool s) { return s; });
  if (config_.use_sod && !has_sod) {
    throw ValidationError("encode_row: config expects start-of-document tokens, batch has none");
  }
  if (!config_.use_sod && has_sod) {
    throw ValidationError("encode_row: batch carries start-of-document tokens, config disables them");
  }

  Tensor h = embed(ids, positions);
  const AttentionMaskMatrix mask =
      config_.hier_enc ? hierarchical_mask(doc, sod, pad) : full_mask(pad);

  if (trace) {
    trace->len = len;
    trace->weights.clear();
  }
  for (const EncLayer& layer : enc_layers_) {
    std::vector<std::vector<double>> head_weights;
    Tensor attn_out = attention(layer.attn, h, h, &mask, {},
                                trace ? &head_weights : nullptr, nullptr);
    if (trace) trace->weights.push_back(std::move(head_weights));
    h = layer_norm(add(h, maybe_dropout(attn_out)), layer.ln1.g, layer.ln1.b);
    h = layer_norm(add(h, maybe_dropout(feed_forward(layer.ff, h))), layer.ln2.g, layer.ln2.b);
  }
  return h;
}

Tensor HierTransformer::decoder_logits(const Tensor& encoder_states,
                                       std::span<const DocSpan> spans,
                                       std::span<const int> prev_tokens,
                                       CrossRowTrace* trace) const {
  if (prev_tokens.empty()) {
    throw ValidationError("decoder_logits: previous-token sequence is empty");
  }
  if (prev_tokens[0] != kSodId) {
    throw ValidationError("decoder_logits: decoding must start from the start token");
  }
  const int t = static_cast<int>(prev_tokens.size());
  std::vector<int> positions(t);
  std::iota(positions.begin(), positions.end(), 0);

  Tensor h = embed(prev_tokens, positions);
  const AttentionMaskMatrix self_mask = causal_mask(t);
  const AttentionMaskMatrix cross_mask(1, encoder_states.rows(), true);

  if (trace) {
    trace->t_len = t;
    trace->k_len = encoder_states.rows();
    trace->n_docs = static_cast<int>(spans.size());
    trace->weights.clear();
    trace->doc_scaling.clear();
  }
  const std::span<const DocSpan> cross_spans =
      config_.hier_dec ? spans : std::span<const DocSpan>{};
  for (const DecLayer& layer : dec_layers_) {
    Tensor self_out = attention(layer.self, h, h, &self_mask, {}, nullptr, nullptr);
    h = layer_norm(add(h, maybe_dropout(self_out)), layer.ln1.g, layer.ln1.b);

    std::vector<std::vector<double>> head_weights, head_scaling;
    Tensor cross_out = attention(layer.cross, h, encoder_states, &cross_mask, cross_spans,
                                 trace ? &head_weights : nullptr,
                                 (trace && config_.hier_dec) ? &head_scaling : nullptr);
    if (trace) {
      trace->weights.push_back(std::move(head_weights));
      if (config_.hier_dec) trace->doc_scaling.push_back(std::move(head_scaling));
    }
    h = layer_norm(add(h, maybe_dropout(cross_out)), layer.ln2.g, layer.ln2.b);

    h = layer_norm(add(h, maybe_dropout(feed_forward(layer.ff, h))), layer.ln3.g, layer.ln3.b);
  }
  return matmul(h, transpose(tok_emb_));
}

Tensor HierTransformer::decode_step(const Tensor& encoder_states, std::span<const DocSpan> spans,
                                    std::span<const int> prev_tokens, CrossRowTrace* trace) const {
  Tensor logits = decoder_logits(encoder_states, spans, prev_tokens, trace);
  Tensor last = slice_rows(logits, logits.rows() - 1, 1);
  return Tensor::from_data({config_.vocab_size},
                           std::vector<double>(last.data().begin(), last.data().end()));
}

Tensor HierTransformer::forward_train(const MultiDocBatch& batch) {
  training_ = true;
  Tensor total;
  int64_t count_total = 0;
  try {
    for (int b = 0; b < batch.batch; ++b) {
      Tensor enc = encode_row(batch, b);
      const std::vector<DocSpan> spans = doc_spans_of_row(batch, b);
      const int t = batch.tgt_rows[b];
      const int offset = b * batch.tgt_len;
      std::span<const int> prev(batch.decoder_input_ids.data() + offset, t);
      std::span<const int> labels(batch.labels.data() + offset, t);
      Tensor logits = decoder_logits(enc, spans, prev);
      int count = 0;
      Tensor row_loss = cross_entropy_sum(logits, labels, kPadId, &count);
      count_total += count;
      total = total.defined() ? add(total, row_loss) : row_loss;
    }
  } catch (...) {
    training_ = false;
    throw;
  }
  training_ = false;
  return scale(total, 1.0 / static_cast<double>(count_total));
}

}  // namespace hiersum
