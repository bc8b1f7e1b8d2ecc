#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hiersum/vocab.hpp"

namespace hiersum {

/// Untokenized example as read from or written to JSONL.
struct RawExample {
  std::vector<std::string> documents;
  std::string summary;
};

/// Token-id form of one example.
struct MultiDocExample {
  std::vector<std::vector<int>> documents;
  std::vector<int> summary;
};

/// Sentinel written into doc_index at PAD positions.
inline constexpr int kNoDoc = -1;

struct BatchConfig {
  bool use_sod = true;
  bool pos_restart = true;
  int src_trunc = 4096;
  int tgt_trunc = 1024;
};

/// A padded batch. 2D fields are row-major [batch, src_len] on the encoder
/// side and [batch, tgt_len] on the decoder side; src_rows/tgt_rows hold the
/// unpadded lengths.
struct MultiDocBatch {
  int batch = 0;
  int src_len = 0;
  int tgt_len = 0;

  std::vector<int> input_ids;
  std::vector<int> doc_index;
  std::vector<int> position_ids;
  std::vector<uint8_t> sod_mask;
  std::vector<uint8_t> pad_mask;  // true at PAD positions

  std::vector<int> decoder_input_ids;
  std::vector<int> labels;

  std::vector<int> src_rows;
  std::vector<int> tgt_rows;
  std::vector<int> n_docs;
};

/// With require_summary false, lines may omit the summary field (it loads
/// as an empty string), which suits generation-only inputs.
std::vector<RawExample> load_jsonl(const std::string& path, bool require_summary = true);
void write_jsonl(const std::string& path, std::span<const RawExample> examples);

struct SyntheticConfig {
  uint64_t seed = 0;
  int count = 100;
  int n_docs_min = 2;
  int n_docs_max = 4;
  int facts_min = 1;
  int facts_max = 4;
};

/// Key-value merge task: each document states facts "k<i> = v<j>" over keys
/// disjoint from the other documents'; the reference summary lists every
/// stated key's value in ascending key order, so producing it requires
/// reading all documents.
std::vector<RawExample> gen_synthetic(const SyntheticConfig& config);

Vocabulary build_vocab(std::span<const RawExample> corpus, int min_freq);

MultiDocExample encode_example(const RawExample& raw, const Vocabulary& vocab);

MultiDocBatch make_batch(std::span<const MultiDocExample> examples, const BatchConfig& config);

}  // namespace hiersum
