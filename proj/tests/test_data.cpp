#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "hiersum/data.hpp"
#include "hiersum/errors.hpp"

using namespace hiersum;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

Vocabulary tiny_vocab() {
  std::vector<RawExample> corpus{{{"a b", "c"}, "s1 s2"}};
  return build_vocab(corpus, 1);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("load_jsonl reads valid lines and skips blanks") {
  const auto path = temp_file("hiersum_data_valid.jsonl");
  {
    std::ofstream out(path);
    out << R"({"documents":["d1","d2"],"summary":"s"})" << "\n";
    out << "\n";
    out << R"({"documents":["only"],"summary":"t"})" << "\n";
    out << R"({"documents":["x","y","z"],"summary":"u"})" << "\n";
  }
  std::vector<RawExample> examples = load_jsonl(path.string());
  REQUIRE(examples.size() == 3);
  CHECK(examples[0].documents.size() == 2);
  CHECK(examples[0].summary == "s");
  CHECK(examples[2].documents.size() == 3);
  std::filesystem::remove(path);
}

TEST_CASE("load_jsonl reports the offending line") {
  const auto path = temp_file("hiersum_data_bad.jsonl");
  {
    std::ofstream out(path);
    out << R"({"documents":["ok"],"summary":"s"})" << "\n";
    out << "{not json\n";
  }
  CHECK_THROWS_WITH_AS(load_jsonl(path.string()), doctest::Contains("line 2"), ValidationError);

  {
    std::ofstream out(path);
    out << R"({"documents":["ok"]})" << "\n";
  }
  CHECK_THROWS_WITH_AS(load_jsonl(path.string()), doctest::Contains("summary"), ValidationError);

  {
    std::ofstream out(path);
    out << R"({"documents":[],"summary":"s"})" << "\n";
  }
  CHECK_THROWS_AS(load_jsonl(path.string()), ValidationError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_jsonl(path.string()), IoError);
}

TEST_CASE("write_jsonl round-trips through load_jsonl") {
  std::vector<RawExample> examples{{{"a b", "c d"}, "sum one"}, {{"e"}, "sum two"}};
  const auto path = temp_file("hiersum_data_roundtrip.jsonl");
  write_jsonl(path.string(), examples);
  std::vector<RawExample> back = load_jsonl(path.string());
  REQUIRE(back.size() == 2);
  CHECK(back[0].documents == examples[0].documents);
  CHECK(back[0].summary == examples[0].summary);
  CHECK(back[1].documents == examples[1].documents);
  std::filesystem::remove(path);
}

TEST_CASE("generator is deterministic given the seed") {
  SyntheticConfig config;
  config.seed = 7;
  config.count = 20;
  std::vector<RawExample> a = gen_synthetic(config);
  std::vector<RawExample> b = gen_synthetic(config);
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].documents == b[i].documents);
    CHECK(a[i].summary == b[i].summary);
  }
  config.seed = 8;
  std::vector<RawExample> c = gen_synthetic(config);
  bool any_diff = false;
  for (size_t i = 0; i < a.size(); ++i) any_diff = any_diff || a[i].summary != c[i].summary;
  CHECK(any_diff);
}

TEST_CASE("generator honors the document count range") {
  SyntheticConfig config;
  config.n_docs_min = 2;
  config.n_docs_max = 2;
  config.count = 25;
  for (const RawExample& ex : gen_synthetic(config)) CHECK(ex.documents.size() == 2);
}

TEST_CASE("summaries draw only on stated keys and values, in key order") {
  SyntheticConfig config;
  config.seed = 3;
  config.count = 30;
  config.n_docs_min = 2;
  config.n_docs_max = 4;
  config.facts_min = 1;
  config.facts_max = 5;
  for (const RawExample& ex : gen_synthetic(config)) {
    std::set<std::string> doc_tokens;
    std::set<std::string> keys_per_doc_check;
    for (const std::string& doc : ex.documents) {
      std::set<std::string> doc_keys;
      for (const std::string& tok : split_whitespace(doc)) {
        doc_tokens.insert(tok);
        if (tok[0] == 'k') doc_keys.insert(tok);
      }
      for (const std::string& k : doc_keys) {
        CHECK(!keys_per_doc_check.count(k));  // keys are disjoint across documents
        keys_per_doc_check.insert(k);
      }
    }
    std::vector<int> key_order;
    for (const std::string& tok : split_whitespace(ex.summary)) {
      CHECK(doc_tokens.count(tok));
      if (tok[0] == 'k') key_order.push_back(std::stoi(tok.substr(1)));
    }
    CHECK(std::is_sorted(key_order.begin(), key_order.end()));
    CHECK(key_order.size() == keys_per_doc_check.size());
  }
}

TEST_CASE("batch layout for two documents with start tokens and position restart") {
  Vocabulary v = tiny_vocab();
  MultiDocExample ex = encode_example({{"a b", "c"}, "s1 s2"}, v);
  BatchConfig config{true, true, 64, 16};
  MultiDocBatch batch = make_batch(std::vector<MultiDocExample>{ex}, config);

  REQUIRE(batch.batch == 1);
  REQUIRE(batch.src_len == 5);
  const int a = v.id_of("a"), b = v.id_of("b"), c = v.id_of("c");
  CHECK(batch.input_ids == std::vector<int>{kSodId, a, b, kSodId, c});
  CHECK(batch.position_ids == std::vector<int>{0, 1, 2, 0, 1});
  CHECK(batch.doc_index == std::vector<int>{0, 0, 0, 1, 1});
  CHECK(batch.sod_mask == std::vector<uint8_t>{1, 0, 0, 1, 0});
  CHECK(batch.pad_mask == std::vector<uint8_t>{0, 0, 0, 0, 0});

  const int s1 = v.id_of("s1"), s2 = v.id_of("s2");
  CHECK(batch.decoder_input_ids == std::vector<int>{kSodId, s1, s2});
  CHECK(batch.labels == std::vector<int>{s1, s2, kEosId});
}

TEST_CASE("batch layout without position restart") {
  Vocabulary v = tiny_vocab();
  MultiDocExample ex = encode_example({{"a b", "c"}, "s1 s2"}, v);
  BatchConfig config{true, false, 64, 16};
  MultiDocBatch batch = make_batch(std::vector<MultiDocExample>{ex}, config);
  CHECK(batch.position_ids == std::vector<int>{0, 1, 2, 3, 4});
}

TEST_CASE("batch layout without start tokens") {
  Vocabulary v = tiny_vocab();
  MultiDocExample ex = encode_example({{"a b", "c"}, "s1 s2"}, v);
  BatchConfig config{false, true, 64, 16};
  MultiDocBatch batch = make_batch(std::vector<MultiDocExample>{ex}, config);
  REQUIRE(batch.src_len == 3);
  const int a = v.id_of("a"), b = v.id_of("b"), c = v.id_of("c");
  CHECK(batch.input_ids == std::vector<int>{a, b, c});
  CHECK(batch.doc_index == std::vector<int>{0, 0, 1});
  CHECK(batch.sod_mask == std::vector<uint8_t>{0, 0, 0});
}

TEST_CASE("shorter rows are padded and flagged") {
  Vocabulary v = tiny_vocab();
  MultiDocExample long_ex = encode_example({{"a b", "c"}, "s1 s2"}, v);
  MultiDocExample short_ex = encode_example({{"c"}, "s1"}, v);
  BatchConfig config{true, true, 64, 16};
  MultiDocBatch batch = make_batch(std::vector<MultiDocExample>{long_ex, short_ex}, config);

  REQUIRE(batch.batch == 2);
  REQUIRE(batch.src_len == 5);
  CHECK(batch.src_rows == std::vector<int>{5, 2});
  for (int p = 2; p < 5; ++p) {
    CHECK(batch.input_ids[5 + p] == kPadId);
    CHECK(batch.pad_mask[5 + p] == 1);
    CHECK(batch.doc_index[5 + p] == kNoDoc);
  }
  CHECK(batch.tgt_rows == std::vector<int>{3, 2});
  CHECK(batch.labels[batch.tgt_len + 1] == kEosId);
  CHECK(batch.labels[batch.tgt_len + 2] == kPadId);
}

TEST_CASE("documents shrink proportionally under source truncation") {
  Vocabulary v = tiny_vocab();
  MultiDocExample ex;
  ex.documents = {std::vector<int>(30, v.id_of("a")), std::vector<int>(10, v.id_of("c"))};
  ex.summary = {v.id_of("s1")};
  BatchConfig config{true, true, 22, 16};  // budget 20 after two start tokens
  MultiDocBatch batch = make_batch(std::vector<MultiDocExample>{ex}, config);

  CHECK(batch.src_len <= 22);
  int sod_count = 0;
  std::vector<int> per_doc(2, 0);
  for (int p = 0; p < batch.src_len; ++p) {
    if (batch.sod_mask[p]) {
      ++sod_count;
    } else if (!batch.pad_mask[p]) {
      ++per_doc[batch.doc_index[p]];
    }
  }
  CHECK(sod_count == 2);
  CHECK(per_doc[0] == 15);  // floor(20 * 30/40)
  CHECK(per_doc[1] == 5);   // floor(20 * 10/40)
}

TEST_CASE("every document keeps at least one token under tight truncation") {
  Vocabulary v = tiny_vocab();
  MultiDocExample ex;
  ex.documents = {std::vector<int>(50, v.id_of("a")), {v.id_of("c")}, {v.id_of("b")}};
  ex.summary = {v.id_of("s1")};
  BatchConfig config{true, true, 9, 16};  // budget 6 for three documents
  MultiDocBatch batch = make_batch(std::vector<MultiDocExample>{ex}, config);
  std::vector<int> per_doc(3, 0);
  for (int p = 0; p < batch.src_len; ++p) {
    if (!batch.pad_mask[p] && !batch.sod_mask[p]) ++per_doc[batch.doc_index[p]];
  }
  for (int d = 0; d < 3; ++d) CHECK(per_doc[d] >= 1);
  CHECK(batch.src_len <= 9);
}

TEST_CASE("truncation too small for the document count is an error") {
  Vocabulary v = tiny_vocab();
  MultiDocExample ex = encode_example({{"a b", "c"}, "s1"}, v);
  BatchConfig config{true, true, 3, 16};  // 2 start tokens leave budget 1 < 2 docs
  CHECK_THROWS_AS(make_batch(std::vector<MultiDocExample>{ex}, config), ValidationError);

  MultiDocExample empty_doc;
  empty_doc.documents = {{v.id_of("a")}, {}};
  empty_doc.summary = {v.id_of("s1")};
  BatchConfig ok{true, true, 64, 16};
  CHECK_THROWS_AS(make_batch(std::vector<MultiDocExample>{empty_doc}, ok), ValidationError);

  CHECK_THROWS_AS(make_batch(std::vector<MultiDocExample>{}, ok), ValidationError);
}

TEST_CASE("long summaries truncate with shift-consistent labels") {
  Vocabulary v = tiny_vocab();
  MultiDocExample ex = encode_example({{"a"}, "s1 s2 s1 s2 s1"}, v);
  BatchConfig config{true, true, 64, 3};
  MultiDocBatch batch = make_batch(std::vector<MultiDocExample>{ex}, config);
  const int s1 = v.id_of("s1"), s2 = v.id_of("s2");
  CHECK(batch.tgt_len == 3);
  CHECK(batch.decoder_input_ids == std::vector<int>{kSodId, s1, s2});
  CHECK(batch.labels == std::vector<int>{s1, s2, s1});
}

TEST_CASE("restarted positions equal offset from document start") {
  SyntheticConfig gen;
  gen.seed = 11;
  gen.count = 8;
  std::vector<RawExample> raw = gen_synthetic(gen);
  Vocabulary v = build_vocab(raw, 1);
  std::vector<MultiDocExample> encoded;
  for (const RawExample& r : raw) encoded.push_back(encode_example(r, v));
  BatchConfig config{true, true, 4096, 1024};
  MultiDocBatch batch = make_batch(encoded, config);

  for (int b = 0; b < batch.batch; ++b) {
    const int off = b * batch.src_len;
    int doc_start = 0;
    for (int p = 0; p < batch.src_rows[b]; ++p) {
      if (p > 0 && batch.doc_index[off + p] != batch.doc_index[off + p - 1]) doc_start = p;
      CHECK(batch.position_ids[off + p] == p - doc_start);
      if (p > 0) CHECK(batch.doc_index[off + p] >= batch.doc_index[off + p - 1]);
      CHECK(batch.sod_mask[off + p] == (batch.input_ids[off + p] == kSodId ? 1 : 0));
    }
    int sods = 0;
    for (int p = 0; p < batch.src_rows[b]; ++p) sods += batch.sod_mask[off + p];
    CHECK(sods == batch.n_docs[b]);
  }
}

}  // TEST_SUITE
