#include "hiersum/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

#include "hiersum/errors.hpp"
#include "json.hpp"

namespace hiersum {

namespace {
using nlohmann::json;
}

std::vector<RawExample> load_jsonl(const std::string& path, bool require_summary) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path);
  std::vector<RawExample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!obj.is_object() || !obj.contains("documents") || !obj["documents"].is_array()) {
      throw ValidationError(path + " line " + std::to_string(lineno) +
                            ": missing \"documents\" array");
    }
    if (require_summary && (!obj.contains("summary") || !obj["summary"].is_string())) {
      throw ValidationError(path + " line " + std::to_string(lineno) +
                            ": missing \"summary\" string");
    }
    if (obj.contains("summary") && !obj["summary"].is_string()) {
      throw ValidationError(path + " line " + std::to_string(lineno) +
                            ": \"summary\" must be a string");
    }
    RawExample ex;
    for (const auto& doc : obj["documents"]) {
      if (!doc.is_string()) {
        throw ValidationError(path + " line " + std::to_string(lineno) +
                              ": \"documents\" entries must be strings");
      }
      ex.documents.push_back(doc.get<std::string>());
    }
    if (ex.documents.empty()) {
      throw ValidationError(path + " line " + std::to_string(lineno) +
                            ": \"documents\" must hold at least one document");
    }
    if (obj.contains("summary")) ex.summary = obj["summary"].get<std::string>();
    out.push_back(std::move(ex));
  }
  return out;
}

void write_jsonl(const std::string& path, std::span<const RawExample> examples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write dataset file: " + path);
  for (const RawExample& ex : examples) {
    json obj;
    obj["documents"] = ex.documents;
    obj["summary"] = ex.summary;
    out << obj.dump() << '\n';
  }
  if (!out) throw IoError("failed while writing dataset file: " + path);
}

std::vector<RawExample> gen_synthetic(const SyntheticConfig& config) {
  constexpr int kKeys = 16;
  constexpr int kValues = 36;
  if (config.count < 1) throw ValidationError("gen_synthetic: count must be >= 1");
  if (config.n_docs_min < 1 || config.n_docs_max < config.n_docs_min) {
    throw ValidationError("gen_synthetic: bad document count range");
  }
  if (config.facts_min < 1 || config.facts_max < config.facts_min) {
    throw ValidationError("gen_synthetic: bad facts range");
  }
  if (config.n_docs_min > kKeys) {
    throw ValidationError("gen_synthetic: more documents than distinct keys");
  }

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> n_docs_dist(config.n_docs_min, config.n_docs_max);
  std::uniform_int_distribution<int> facts_dist(config.facts_min, config.facts_max);
  std::uniform_int_distribution<int> value_dist(0, kValues - 1);

  std::vector<RawExample> out;
  out.reserve(config.count);
  for (int e = 0; e < config.count; ++e) {
    const int n_docs = n_docs_dist(rng);

    std::vector<int> keys(kKeys);
    std::iota(keys.begin(), keys.end(), 0);
    std::shuffle(keys.begin(), keys.end(), rng);

    RawExample ex;
    std::vector<std::pair<int, int>> mentioned;  // (key, value)
    int next_key = 0;
    for (int d = 0; d < n_docs; ++d) {
      // Disjoint key subsets: later documents must still get one key each.
      const int docs_left_after = n_docs - d - 1;
      const int available = kKeys - next_key - docs_left_after;
      const int facts = std::clamp(facts_dist(rng), 1, available);
      std::string text;
      for (int f = 0; f < facts; ++f) {
        const int key = keys[next_key++];
        const int value = value_dist(rng);
        mentioned.emplace_back(key, value);
        if (!text.empty()) text += " ; ";
        text += "k" + std::to_string(key) + " = v" + std::to_string(value);
      }
      ex.documents.push_back(std::move(text));
    }

    std::sort(mentioned.begin(), mentioned.end());
    std::string summary;
    for (const auto& [key, value] : mentioned) {
      if (!summary.empty()) summary += ' ';
      summary += "k" + std::to_string(key) + " v" + std::to_string(value);
    }
    ex.summary = std::move(summary);
    out.push_back(std::move(ex));
  }
  return out;
}

Vocabulary build_vocab(std::span<const RawExample> corpus, int min_freq) {
  if (corpus.empty()) throw ValidationError("build_vocab: empty corpus");
  std::vector<std::string> texts;
  for (const RawExample& ex : corpus) {
    for (const std::string& doc : ex.documents) texts.push_back(doc);
    texts.push_back(ex.summary);
  }
  return Vocabulary::build(texts, min_freq);
}

MultiDocExample encode_example(const RawExample& raw, const Vocabulary& vocab) {
  if (raw.documents.empty()) {
    throw ValidationError("encode_example: example has no documents");
  }
  MultiDocExample ex;
  for (const std::string& doc : raw.documents) ex.documents.push_back(vocab.encode(doc));
  ex.summary = vocab.encode(raw.summary);
  return ex;
}

namespace {

// Shrinks document lengths proportionally until they fit the token budget,
// never below one token per document.
std::vector<int> truncated_lengths(const std::vector<std::vector<int>>& docs, int budget) {
  const int n = static_cast<int>(docs.size());
  int64_t total = 0;
  for (const auto& d : docs) total += static_cast<int64_t>(d.size());
  std::vector<int> kept(n);
  if (total <= budget) {
    for (int i = 0; i < n; ++i) kept[i] = static_cast<int>(docs[i].size());
    return kept;
  }
  int64_t used = 0;
  for (int i = 0; i < n; ++i) {
    kept[i] = std::max<int64_t>(1, static_cast<int64_t>(docs[i].size()) * budget / total);
    kept[i] = std::min<int>(kept[i], static_cast<int>(docs[i].size()));
    used += kept[i];
  }
  while (used > budget) {
    int largest = -1;
    for (int i = 0; i < n; ++i) {
      if (kept[i] > 1 && (largest < 0 || kept[i] > kept[largest])) largest = i;
    }
    if (largest < 0) break;
    --kept[largest];
    --used;
  }
  return kept;
}

}  // namespace

MultiDocBatch make_batch(std::span<const MultiDocExample> examples, const BatchConfig& config) {
  if (examples.empty()) throw ValidationError("make_batch: empty batch");
  if (config.src_trunc < 1 || config.tgt_trunc < 1) {
    throw ValidationError("make_batch: truncation limits must be >= 1");
  }

  struct Row {
    std::vector<int> ids, doc, pos;
    std::vector<uint8_t> sod;
    std::vector<int> dec_in, lab;
    int n_docs = 0;
  };
  std::vector<Row> rows;
  rows.reserve(examples.size());

  for (const MultiDocExample& ex : examples) {
    const int n = static_cast<int>(ex.documents.size());
    if (n < 1) throw ValidationError("make_batch: example has no documents");
    for (const auto& d : ex.documents) {
      if (d.empty()) throw ValidationError("make_batch: empty document in example");
    }
    const int budget = config.src_trunc - (config.use_sod ? n : 0);
    if (budget < n) {
      throw ValidationError("make_batch: source truncation " + std::to_string(config.src_trunc) +
                            " cannot keep one token per document for " + std::to_string(n) +
                            " documents");
    }

    Row row;
    row.n_docs = n;
    const std::vector<int> kept = truncated_lengths(ex.documents, budget);
    for (int d = 0; d < n; ++d) {
      const int doc_start = static_cast<int>(row.ids.size());
      if (config.use_sod) {
        row.ids.push_back(kSodId);
        row.doc.push_back(d);
        row.sod.push_back(1);
      }
      for (int t = 0; t < kept[d]; ++t) {
        row.ids.push_back(ex.documents[d][t]);
        row.doc.push_back(d);
        row.sod.push_back(0);
      }
      for (int p = doc_start; p < static_cast<int>(row.ids.size()); ++p) {
        row.pos.push_back(config.pos_restart ? p - doc_start : p);
      }
    }

    const int t_len = std::min<int>(static_cast<int>(ex.summary.size()) + 1, config.tgt_trunc);
    row.dec_in.push_back(kSodId);
    for (int t = 0; t + 1 < t_len; ++t) row.dec_in.push_back(ex.summary[t]);
    for (int t = 0; t < t_len - 1; ++t) row.lab.push_back(ex.summary[t]);
    row.lab.push_back(t_len == static_cast<int>(ex.summary.size()) + 1 ? kEosId
                                                                       : ex.summary[t_len - 1]);
    rows.push_back(std::move(row));
  }

  MultiDocBatch batch;
  batch.batch = static_cast<int>(rows.size());
  for (const Row& row : rows) {
    batch.src_len = std::max(batch.src_len, static_cast<int>(row.ids.size()));
    batch.tgt_len = std::max(batch.tgt_len, static_cast<int>(row.dec_in.size()));
  }

  const size_t src_total = static_cast<size_t>(batch.batch) * batch.src_len;
  const size_t tgt_total = static_cast<size_t>(batch.batch) * batch.tgt_len;
  batch.input_ids.assign(src_total, kPadId);
  batch.doc_index.assign(src_total, kNoDoc);
  batch.position_ids.assign(src_total, 0);
  batch.sod_mask.assign(src_total, 0);
  batch.pad_mask.assign(src_total, 1);
  batch.decoder_input_ids.assign(tgt_total, kPadId);
  batch.labels.assign(tgt_total, kPadId);

  for (int b = 0; b < batch.batch; ++b) {
    const Row& row = rows[b];
    const size_t so = static_cast<size_t>(b) * batch.src_len;
    for (size_t p = 0; p < row.ids.size(); ++p) {
      batch.input_ids[so + p] = row.ids[p];
      batch.doc_index[so + p] = row.doc[p];
      batch.position_ids[so + p] = row.pos[p];
      batch.sod_mask[so + p] = row.sod[p];
      batch.pad_mask[so + p] = 0;
    }
    const size_t to = static_cast<size_t>(b) * batch.tgt_len;
    for (size_t t = 0; t < row.dec_in.size(); ++t) {
      batch.decoder_input_ids[to + t] = row.dec_in[t];
      batch.labels[to + t] = row.lab[t];
    }
    batch.src_rows.push_back(static_cast<int>(row.ids.size()));
    batch.tgt_rows.push_back(static_cast<int>(row.dec_in.size()));
    batch.n_docs.push_back(row.n_docs);
  }
  return batch;
}

}  // namespace hiersum
