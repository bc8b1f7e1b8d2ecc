#include <cmath>
#include <vector>

#include "doctest.h"
#include "hiersum/data.hpp"
#include "hiersum/errors.hpp"
#include "hiersum/model.hpp"
#include "testutil.hpp"

using namespace hiersum;
using testutil::gradcheck_max_rel_err;

namespace {

struct Fixture {
  Vocabulary vocab;
  std::vector<MultiDocExample> examples;

  explicit Fixture(std::vector<RawExample> raw) : vocab(build_vocab(raw, 1)) {
    for (const RawExample& r : raw) examples.push_back(encode_example(r, vocab));
  }
};

ModelConfig small_config(int vocab_size) {
  ModelConfig config;
  config.d_model = 16;
  config.n_heads = 2;
  config.d_ff = 32;
  config.n_enc_layers = 2;
  config.n_dec_layers = 2;
  config.vocab_size = vocab_size;
  config.max_positions = 16;
  config.src_trunc = 64;
  config.tgt_trunc = 16;
  return config;
}

MultiDocBatch batch_of(const Fixture& f, const ModelConfig& config) {
  BatchConfig bc{config.use_sod, config.pos_restart, config.src_trunc, config.tgt_trunc};
  return make_batch(f.examples, bc);
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation rejects inconsistent settings") {
  ModelConfig config = small_config(20);
  config.n_heads = 3;
  CHECK_THROWS_AS(config.validate(), ValidationError);

  config = small_config(20);
  config.use_sod = false;
  CHECK_THROWS_AS(config.validate(), ValidationError);  // hierarchical flags still on
  config.hier_enc = false;
  config.hier_dec = false;
  CHECK_NOTHROW(config.validate());

  config = small_config(20);
  config.dropout = 1.0;
  CHECK_THROWS_AS(config.validate(), ValidationError);
  config.dropout = -0.1;
  CHECK_THROWS_AS(config.validate(), ValidationError);

  config = small_config(0);
  CHECK_THROWS_AS(config.validate(), ValidationError);
}

TEST_CASE("parameter count matches the closed form") {
  ModelConfig config;
  config.d_model = 4;
  config.n_heads = 2;
  config.d_ff = 8;
  config.n_enc_layers = 1;
  config.n_dec_layers = 1;
  config.vocab_size = 10;
  config.max_positions = 6;
  // embeddings 40+24; encoder layer 80+76+16; decoder layer 160+76+24
  CHECK(HierTransformer::expected_param_count(config) == 496);
  HierTransformer model(config, 0);
  CHECK(model.param_count() == 496);

  ModelConfig bigger = small_config(33);
  HierTransformer big(bigger, 1);
  CHECK(big.param_count() == HierTransformer::expected_param_count(bigger));
}

TEST_CASE("initialization is seed-deterministic with unit layer-norm gains") {
  ModelConfig config = small_config(20);
  HierTransformer a(config, 7), b(config, 7), c(config, 8);
  bool all_equal = true, any_diff = false;
  for (size_t i = 0; i < a.named_params().size(); ++i) {
    const auto& pa = a.named_params()[i].second;
    const auto& pb = b.named_params()[i].second;
    const auto& pc = c.named_params()[i].second;
    for (size_t j = 0; j < pa.data().size(); ++j) {
      all_equal = all_equal && pa.data()[j] == pb.data()[j];
      any_diff = any_diff || pa.data()[j] != pc.data()[j];
    }
  }
  CHECK(all_equal);
  CHECK(any_diff);

  for (double g : a.param("enc.0.ln1.g").data()) CHECK(g == 1.0);
  for (double g : a.param("dec.1.ln3.g").data()) CHECK(g == 1.0);
  for (double g : a.param("dec.0.cross.bo").data()) CHECK(g == 0.0);
}

TEST_CASE("document-restricted encoder puts zero mass on other documents") {
  Fixture f(std::vector<RawExample>{{{"a b c", "d e"}, "a d"}});
  ModelConfig config = small_config(f.vocab.size());
  HierTransformer model(config, 3);
  MultiDocBatch batch = batch_of(f, config);

  EncRowTrace trace;
  model.encode_row(batch, 0, &trace);
  REQUIRE(trace.len == 7);
  REQUIRE(trace.weights.size() == 2);

  const int off = 0;
  for (const auto& heads : trace.weights) {
    REQUIRE(heads.size() == 2);
    for (const auto& w : heads) {
      for (int q = 0; q < trace.len; ++q) {
        if (batch.sod_mask[off + q]) continue;
        for (int k = 0; k < trace.len; ++k) {
          if (batch.doc_index[off + k] != batch.doc_index[off + q]) {
            CHECK(w[q * trace.len + k] == 0.0);
          }
        }
      }
    }
  }
}

TEST_CASE("single-document input encodes identically with and without restriction") {
  Fixture f(std::vector<RawExample>{{{"a b c d"}, "a"}});
  ModelConfig on = small_config(f.vocab.size());
  ModelConfig off = on;
  off.hier_enc = false;
  HierTransformer m_on(on, 5), m_off(off, 5);
  MultiDocBatch batch = batch_of(f, on);

  Tensor h_on = m_on.encode_row(batch, 0);
  Tensor h_off = m_off.encode_row(batch, 0);
  REQUIRE(h_on.numel() == h_off.numel());
  for (size_t i = 0; i < h_on.data().size(); ++i) {
    CHECK(std::abs(h_on.data()[i] - h_off.data()[i]) <= 1e-12);
  }
}

TEST_CASE("single-document logits agree between scaled and standard cross-attention") {
  Fixture f(std::vector<RawExample>{{{"a b c d"}, "a b"}});
  ModelConfig on = small_config(f.vocab.size());
  ModelConfig off = on;
  off.hier_dec = false;
  HierTransformer m_on(on, 11), m_off(off, 11);
  MultiDocBatch batch = batch_of(f, on);

  Tensor enc_on = m_on.encode_row(batch, 0);
  Tensor enc_off = m_off.encode_row(batch, 0);
  std::vector<DocSpan> spans = doc_spans_of_row(batch, 0);
  std::vector<int> prev{kSodId, f.vocab.id_of("a")};
  Tensor l_on = m_on.decoder_logits(enc_on, spans, prev);
  Tensor l_off = m_off.decoder_logits(enc_off, spans, prev);
  for (size_t i = 0; i < l_on.data().size(); ++i) {
    CHECK(std::abs(l_on.data()[i] - l_off.data()[i]) <= 1e-12);
  }
}

TEST_CASE("cross-attention weights normalize per document and overall") {
  Fixture f(std::vector<RawExample>{{{"a b c", "d e", "a e"}, "a d"}});
  ModelConfig config = small_config(f.vocab.size());
  HierTransformer model(config, 13);
  MultiDocBatch batch = batch_of(f, config);

  Tensor enc = model.encode_row(batch, 0);
  std::vector<DocSpan> spans = doc_spans_of_row(batch, 0);
  std::vector<int> prev{kSodId, f.vocab.id_of("a"), f.vocab.id_of("d")};
  CrossRowTrace trace;
  model.decoder_logits(enc, spans, prev, &trace);

  REQUIRE(trace.weights.size() == 2);
  REQUIRE(trace.doc_scaling.size() == 2);
  REQUIRE(trace.n_docs == 3);
  for (size_t layer = 0; layer < trace.weights.size(); ++layer) {
    for (size_t head = 0; head < trace.weights[layer].size(); ++head) {
      const auto& w = trace.weights[layer][head];
      const auto& s = trace.doc_scaling[layer][head];
      for (int row = 0; row < trace.t_len; ++row) {
        double total = 0.0;
        for (size_t d = 0; d < spans.size(); ++d) {
          double doc_mass = 0.0;
          for (int k = spans[d].begin; k < spans[d].end; ++k) {
            doc_mass += w[row * trace.k_len + k];
          }
          CHECK(std::abs(doc_mass - s[row * trace.n_docs + d]) < 1e-9);
          total += doc_mass;
        }
        CHECK(std::abs(total - 1.0) < 1e-9);
      }
    }
  }
}

TEST_CASE("untrained loss sits near the uniform baseline") {
  SyntheticConfig gen;
  gen.seed = 21;
  gen.count = 4;
  std::vector<RawExample> raw = gen_synthetic(gen);
  Fixture f(raw);
  ModelConfig config = small_config(f.vocab.size());
  HierTransformer model(config, 17);
  MultiDocBatch batch = batch_of(f, config);

  const double loss = model.forward_train(batch).item();
  const double uniform = std::log(static_cast<double>(f.vocab.size()));
  CHECK(loss > uniform * 0.85);
  CHECK(loss < uniform * 1.15);
}

TEST_CASE("duplicating a row leaves the per-token mean loss unchanged") {
  Fixture f(std::vector<RawExample>{{{"a b c", "d e"}, "a d e"}});
  ModelConfig config = small_config(f.vocab.size());
  HierTransformer model(config, 19);

  BatchConfig bc{config.use_sod, config.pos_restart, config.src_trunc, config.tgt_trunc};
  MultiDocBatch single = make_batch(f.examples, bc);
  std::vector<MultiDocExample> doubled{f.examples[0], f.examples[0]};
  MultiDocBatch twice = make_batch(doubled, bc);

  const double l1 = model.forward_train(single).item();
  const double l2 = model.forward_train(twice).item();
  CHECK(std::abs(l1 - l2) < 1e-9);
}

TEST_CASE("every parameter receives a finite gradient") {
  Fixture f(std::vector<RawExample>{{{"a b", "c d e"}, "a c"}});
  ModelConfig config = small_config(f.vocab.size());
  HierTransformer model(config, 23);
  MultiDocBatch batch = batch_of(f, config);

  model.zero_grads();
  backward(model.forward_train(batch));
  for (const auto& [name, t] : model.named_params()) {
    REQUIRE(t.grad().size() == t.data().size());
    for (double g : t.grad()) CHECK(std::isfinite(g));
  }
}

TEST_CASE("permuting document order permutes scaling factors and keeps local weights") {
  std::vector<RawExample> raw{{{"a b c", "d e", "a e d"}, "a"},
                              {{"d e", "a e d", "a b c"}, "a"}};
  Fixture f(raw);
  ModelConfig config = small_config(f.vocab.size());
  HierTransformer model(config, 29);
  MultiDocBatch batch = batch_of(f, config);

  // row 1 holds documents (1, 2, 0) of row 0
  const std::vector<int> perm{1, 2, 0};

  std::vector<CrossRowTrace> traces(2);
  for (int b = 0; b < 2; ++b) {
    Tensor enc = model.encode_row(batch, b);
    std::vector<DocSpan> spans = doc_spans_of_row(batch, b);
    std::vector<int> prev{kSodId};
    model.decode_step(enc, spans, prev, &traces[b]);
  }

  std::vector<DocSpan> spans0 = doc_spans_of_row(batch, 0);
  std::vector<DocSpan> spans1 = doc_spans_of_row(batch, 1);
  const int row0 = traces[0].t_len - 1, row1 = traces[1].t_len - 1;
  for (size_t layer = 0; layer < traces[0].weights.size(); ++layer) {
    for (size_t head = 0; head < traces[0].weights[layer].size(); ++head) {
      const auto& s0 = traces[0].doc_scaling[layer][head];
      const auto& s1 = traces[1].doc_scaling[layer][head];
      const auto& w0 = traces[0].weights[layer][head];
      const auto& w1 = traces[1].weights[layer][head];
      for (int d = 0; d < 3; ++d) {
        const int d_new = (d + 2) % 3;  // position of old document d in the permuted row
        CHECK(std::abs(s0[row0 * 3 + d] - s1[row1 * 3 + d_new]) < 1e-9);
        const DocSpan a = spans0[d], b2 = spans1[d_new];
        REQUIRE(a.end - a.begin == b2.end - b2.begin);
        for (int j = 0; j < a.end - a.begin; ++j) {
          CHECK(std::abs(w0[row0 * traces[0].k_len + a.begin + j] -
                         w1[row1 * traces[1].k_len + b2.begin + j]) < 1e-9);
        }
      }
    }
  }
  (void)perm;
}

TEST_CASE("batch built without start tokens is rejected when the model expects them") {
  Fixture f(std::vector<RawExample>{{{"a b", "c"}, "a"}});
  ModelConfig config = small_config(f.vocab.size());
  config.hier_enc = false;
  config.hier_dec = false;

  BatchConfig without{false, config.pos_restart, config.src_trunc, config.tgt_trunc};
  MultiDocBatch plain = make_batch(f.examples, without);
  HierTransformer expects_sod(config, 1);
  CHECK_THROWS_AS(expects_sod.encode_row(plain, 0), ValidationError);

  ModelConfig no_sod = config;
  no_sod.use_sod = false;
  HierTransformer expects_plain(no_sod, 1);
  BatchConfig with{true, config.pos_restart, config.src_trunc, config.tgt_trunc};
  MultiDocBatch sod_batch = make_batch(f.examples, with);
  CHECK_THROWS_AS(expects_plain.encode_row(sod_batch, 0), ValidationError);
}

TEST_CASE("sources beyond the configured maximum are rejected, positions wrap") {
  Fixture f(std::vector<RawExample>{{{"a b c d e a b c d e a b"}, "a"}});
  ModelConfig config = small_config(f.vocab.size());
  config.src_trunc = 8;
  HierTransformer model(config, 2);
  BatchConfig bc{true, true, 64, config.tgt_trunc};  // longer than the model allows
  MultiDocBatch batch = make_batch(f.examples, bc);
  CHECK_THROWS_AS(model.encode_row(batch, 0), ValidationError);

  // a tiny position table still encodes long rows by cycling entries
  ModelConfig wrap = small_config(f.vocab.size());
  wrap.max_positions = 4;
  HierTransformer wrap_model(wrap, 2);
  BatchConfig ok{true, true, wrap.src_trunc, wrap.tgt_trunc};
  MultiDocBatch long_batch = make_batch(f.examples, ok);
  CHECK_NOTHROW(wrap_model.encode_row(long_batch, 0));
}

TEST_CASE("decoding validates the previous-token sequence") {
  Fixture f(std::vector<RawExample>{{{"a b"}, "a"}});
  ModelConfig config = small_config(f.vocab.size());
  HierTransformer model(config, 3);
  MultiDocBatch batch = batch_of(f, config);
  Tensor enc = model.encode_row(batch, 0);
  std::vector<DocSpan> spans = doc_spans_of_row(batch, 0);

  std::vector<int> empty;
  CHECK_THROWS_AS(model.decoder_logits(enc, spans, empty), ValidationError);
  std::vector<int> no_start{f.vocab.id_of("a")};
  CHECK_THROWS_AS(model.decoder_logits(enc, spans, no_start), ValidationError);

  std::vector<int> good{kSodId};
  Tensor step = model.decode_step(enc, spans, good);
  CHECK(step.shape() == std::vector<int>{f.vocab.size()});
}

TEST_CASE("analytic gradients of the full model match finite differences") {
  Fixture f(std::vector<RawExample>{{{"a b c", "d e"}, "a d"}});
  ModelConfig config = small_config(f.vocab.size());
  MultiDocBatch batch = batch_of(f, config);
  HierTransformer model(config, 41);

  std::vector<Tensor> leaves;
  for (const auto& [name, t] : model.named_params()) leaves.push_back(t);
  const double err =
      gradcheck_max_rel_err(leaves, [&] { return model.forward_train(batch); });
  CHECK(err < 1e-3);
}

}  // TEST_SUITE
