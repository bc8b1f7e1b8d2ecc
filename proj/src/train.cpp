#include "hiersum/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "hiersum/checkpoint.hpp"
#include "hiersum/config.hpp"
#include "hiersum/errors.hpp"
#include "hiersum/hier_attention.hpp"
#include "json.hpp"

namespace hiersum {

namespace {

using nlohmann::json;

uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

BatchConfig batch_config_of(const ModelConfig& m) {
  BatchConfig bc;
  bc.use_sod = m.use_sod;
  bc.pos_restart = m.pos_restart;
  bc.src_trunc = m.src_trunc;
  bc.tgt_trunc = m.tgt_trunc;
  return bc;
}

std::vector<int> strip_stop(std::span<const int> tokens, int stop) {
  std::vector<int> out(tokens.begin(), tokens.end());
  if (!out.empty() && out.back() == stop) out.pop_back();
  return out;
}

}  // namespace

std::vector<int> epoch_order(int n, uint64_t seed, int64_t epoch) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  uint64_t state = mix64(seed ^ mix64(static_cast<uint64_t>(epoch) + 1));
  for (int i = n - 1; i > 0; --i) {
    state = mix64(state);
    const int j = static_cast<int>(state % static_cast<uint64_t>(i + 1));
    std::swap(order[i], order[j]);
  }
  return order;
}

EvalMetrics evaluate(const HierTransformer& model, std::span<const MultiDocExample> examples,
                     const Vocabulary& vocab, const GenerationConfig& gen, int batch_size) {
  EvalMetrics metrics;
  metrics.n_examples = static_cast<int>(examples.size());
  if (examples.empty()) return metrics;
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  gen.validate(model.config());

  const BatchConfig bc = batch_config_of(model.config());
  double loss_sum = 0.0;
  int64_t label_count = 0;
  int64_t correct = 0;
  int exact = 0;
  std::vector<std::string> hyps;
  std::vector<std::string> refs;

  for (size_t at = 0; at < examples.size(); at += batch_size) {
    const size_t take = std::min<size_t>(batch_size, examples.size() - at);
    const MultiDocBatch mb = make_batch(examples.subspan(at, take), bc);
    for (int b = 0; b < mb.batch; ++b) {
      const Tensor enc = model.encode_row(mb, b);
      const std::vector<DocSpan> spans = doc_spans_of_row(mb, b);
      const int t_len = mb.tgt_rows[b];
      std::span<const int> prev(mb.decoder_input_ids.data() + b * mb.tgt_len, t_len);
      std::span<const int> labels(mb.labels.data() + b * mb.tgt_len, t_len);
      const Tensor logits = model.decoder_logits(enc, spans, prev);
      int count = 0;
      const Tensor ce = cross_entropy_sum(logits, labels, kPadId, &count);
      loss_sum += ce.item();
      label_count += count;
      const int vocab_size = model.config().vocab_size;
      std::span<const double> lv = logits.data();
      for (int t = 0; t < t_len; ++t) {
        if (labels[t] == kPadId) continue;
        int best = 0;
        for (int idx = 1; idx < vocab_size; ++idx) {
          if (lv[t * vocab_size + idx] > lv[t * vocab_size + best]) best = idx;
        }
        if (best == labels[t]) ++correct;
      }
      const GenerationResult gr = greedy_generate_row(model, mb, b, gen);
      const std::vector<int> hyp = strip_stop(gr.tokens, gen.stop_token);
      const MultiDocExample& ex = examples[at + b];
      if (hyp == ex.summary) ++exact;
      hyps.push_back(vocab.decode(hyp));
      refs.push_back(vocab.decode(ex.summary));
    }
  }

  metrics.loss = label_count > 0 ? loss_sum / static_cast<double>(label_count) : 0.0;
  metrics.token_accuracy =
      label_count > 0 ? static_cast<double>(correct) / static_cast<double>(label_count) : 0.0;
  metrics.exact_match = static_cast<double>(exact) / static_cast<double>(examples.size());
  metrics.rouge = rouge_corpus(hyps, refs);
  return metrics;
}

TrainResult train_loop(HierTransformer& model, OptimizerState& opt,
                       std::span<const MultiDocExample> train,
                       std::span<const MultiDocExample> heldout, const Vocabulary& vocab,
                       const TrainConfig& config) {
  config.validate();
  if (train.empty()) throw ValidationError("training dataset is empty");

  const BatchConfig bc = batch_config_of(model.config());
  const int n = static_cast<int>(train.size());
  const int steps_per_epoch = (n + config.batch_size - 1) / config.batch_size;

  GenerationConfig gen;
  gen.max_length = model.config().tgt_trunc;

  std::ofstream metrics_out;
  if (!config.metrics_path.empty()) {
    metrics_out.open(config.metrics_path, std::ios::app);
    if (!metrics_out) throw IoError("cannot write metrics log: " + config.metrics_path);
  }

  TrainResult result;
  result.start_step = opt.step;

  KvMap extra;
  train_config_to_kv(config, extra);

  auto run_eval = [&](int64_t step) {
    EvalMetrics m;
    if (!heldout.empty()) {
      m = evaluate(model, heldout, vocab, gen, config.batch_size);
      if (metrics_out.is_open()) {
        json line;
        line["step"] = step;
        line["eval_loss"] = m.loss;
        line["token_accuracy"] = m.token_accuracy;
        line["exact_match"] = m.exact_match;
        line["rouge1"] = m.rouge.rouge1.f1;
        line["rouge2"] = m.rouge.rouge2.f1;
        line["rougeL"] = m.rouge.rougeL.f1;
        metrics_out << line.dump() << '\n' << std::flush;
      }
    }
    if (!config.checkpoint_path.empty()) {
      save_checkpoint(model, &opt, extra, config.checkpoint_path);
      canonicalize_f32(model, &opt);
    }
    return m;
  };

  std::vector<int> order;
  int64_t order_epoch = -1;
  for (int64_t step = opt.step; step < config.max_steps; ++step) {
    const int64_t epoch = step / steps_per_epoch;
    if (epoch != order_epoch) {
      order = epoch_order(n, config.seed, epoch);
      order_epoch = epoch;
    }
    const int slot = static_cast<int>(step % steps_per_epoch);
    const int begin = slot * config.batch_size;
    const int end = std::min(n, begin + config.batch_size);
    std::vector<MultiDocExample> chosen;
    chosen.reserve(end - begin);
    for (int i = begin; i < end; ++i) chosen.push_back(train[order[i]]);
    const MultiDocBatch mb = make_batch(chosen, bc);

    model.reseed_dropout(mix64(config.seed ^ mix64(static_cast<uint64_t>(step) + 0x5eed)));
    model.zero_grads();
    const Tensor loss = model.forward_train(mb);
    backward(loss);
    const double grad_norm = clip_gradients(model.named_params(), config.grad_clip);
    adam_step(model.named_params(), opt, config);

    result.step_losses.push_back(loss.item());
    if (metrics_out.is_open()) {
      json line;
      line["step"] = step;
      line["loss"] = loss.item();
      line["grad_norm"] = grad_norm;
      metrics_out << line.dump() << '\n';
    }
    if (config.eval_every > 0 && (step + 1) % config.eval_every == 0 &&
        step + 1 < config.max_steps) {
      run_eval(step + 1);
    }
  }
  result.final_eval = run_eval(config.max_steps);
  return result;
}

}  // namespace hiersum
