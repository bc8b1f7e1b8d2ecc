#include "hiersum/trace.hpp"

#include <algorithm>
#include <cmath>

#include "hiersum/checkpoint.hpp"
#include "hiersum/errors.hpp"

namespace hiersum {

int AttentionTrace::n_docs() const {
  int n = 0;
  for (size_t i = 0; i < doc_index.size(); ++i) {
    if (!pad_mask.empty() && pad_mask[i]) continue;
    n = std::max(n, doc_index[i] + 1);
  }
  return n;
}

namespace {

void check_row_sum(std::span<const double> row, const std::string& what, double tol) {
  double sum = 0.0;
  for (double w : row) sum += w;
  if (std::fabs(sum - 1.0) > tol) {
    throw ValidationError("attention trace row of " + what + " sums to " + std::to_string(sum) +
                          ", expected 1");
  }
}

}  // namespace

void validate_trace(const AttentionTrace& trace, double tol) {
  const size_t k = static_cast<size_t>(trace.k);
  if (trace.doc_index.size() != k || trace.sod_mask.size() != k || trace.pad_mask.size() != k) {
    throw ValidationError("attention trace metadata does not match its length");
  }
  for (const auto& heads : trace.encoder_self) {
    for (const auto& w : heads) {
      if (w.size() != k * k) throw ValidationError("encoder attention matrix has wrong size");
      for (size_t q = 0; q < k; ++q) {
        check_row_sum(std::span<const double>(w.data() + q * k, k), "encoder self-attention", tol);
      }
    }
  }
  for (const auto& token : trace.decoder_cross) {
    for (const auto& heads : token) {
      for (const auto& w : heads) {
        if (w.size() != k) throw ValidationError("cross-attention row has wrong size");
        check_row_sum(w, "decoder cross-attention", tol);
      }
    }
  }
}

AttentionTrace build_trace(const MultiDocBatch& batch, int b, const EncRowTrace& enc,
                           const std::vector<CrossRowTrace>& steps) {
  if (b < 0 || b >= batch.batch) throw ValidationError("row index out of range");
  AttentionTrace trace;
  trace.k = batch.src_rows[b];
  if (enc.len != trace.k) {
    throw ValidationError("encoder trace length does not match the source row");
  }
  trace.n_enc_layers = static_cast<int>(enc.weights.size());
  trace.n_heads = trace.n_enc_layers > 0 ? static_cast<int>(enc.weights[0].size()) : 0;
  trace.encoder_self = enc.weights;

  const int base = b * batch.src_len;
  trace.doc_index.assign(batch.doc_index.begin() + base,
                         batch.doc_index.begin() + base + trace.k);
  trace.sod_mask.assign(batch.sod_mask.begin() + base, batch.sod_mask.begin() + base + trace.k);
  trace.pad_mask.assign(batch.pad_mask.begin() + base, batch.pad_mask.begin() + base + trace.k);

  for (const CrossRowTrace& step : steps) {
    if (step.k_len != trace.k) {
      throw ValidationError("cross-attention trace length does not match the source row");
    }
    trace.n_dec_layers = static_cast<int>(step.weights.size());
    std::vector<std::vector<std::vector<double>>> token;
    for (const auto& heads : step.weights) {
      std::vector<std::vector<double>> per_head;
      for (const auto& w : heads) {
        const int t = step.t_len;
        per_head.emplace_back(w.begin() + static_cast<size_t>(t - 1) * trace.k,
                              w.begin() + static_cast<size_t>(t) * trace.k);
      }
      token.push_back(std::move(per_head));
    }
    trace.decoder_cross.push_back(std::move(token));
  }
  validate_trace(trace);
  return trace;
}

void save_trace(const AttentionTrace& trace, const std::string& path) {
  validate_trace(trace);
  Archive archive;
  archive.config["k"] = std::to_string(trace.k);
  archive.config["n_enc_layers"] = std::to_string(trace.n_enc_layers);
  archive.config["n_dec_layers"] = std::to_string(trace.n_dec_layers);
  archive.config["n_heads"] = std::to_string(trace.n_heads);
  archive.config["n_tokens"] = std::to_string(trace.decoder_cross.size());

  auto push = [&archive](const std::string& name, std::vector<int> shape,
                         std::span<const double> values) {
    ArchiveTensor t;
    t.name = name;
    t.shape = std::move(shape);
    t.values.reserve(values.size());
    for (double v : values) t.values.push_back(static_cast<float>(v));
    archive.tensors.push_back(std::move(t));
  };

  for (size_t l = 0; l < trace.encoder_self.size(); ++l) {
    for (size_t h = 0; h < trace.encoder_self[l].size(); ++h) {
      push("enc." + std::to_string(l) + "." + std::to_string(h), {trace.k, trace.k},
           trace.encoder_self[l][h]);
    }
  }
  for (size_t i = 0; i < trace.decoder_cross.size(); ++i) {
    for (size_t l = 0; l < trace.decoder_cross[i].size(); ++l) {
      for (size_t h = 0; h < trace.decoder_cross[i][l].size(); ++h) {
        push("cross." + std::to_string(i) + "." + std::to_string(l) + "." + std::to_string(h),
             {trace.k}, trace.decoder_cross[i][l][h]);
      }
    }
  }
  std::vector<double> doc(trace.doc_index.begin(), trace.doc_index.end());
  std::vector<double> sod(trace.sod_mask.begin(), trace.sod_mask.end());
  std::vector<double> pad(trace.pad_mask.begin(), trace.pad_mask.end());
  push("doc_index", {trace.k}, doc);
  push("sod_mask", {trace.k}, sod);
  push("pad_mask", {trace.k}, pad);
  save_archive(archive, path);
}

AttentionTrace load_trace(const std::string& path) {
  const Archive archive = load_archive(path);
  AttentionTrace trace;
  trace.k = kv_int(archive.config, "k", -1);
  trace.n_enc_layers = kv_int(archive.config, "n_enc_layers", -1);
  trace.n_dec_layers = kv_int(archive.config, "n_dec_layers", -1);
  trace.n_heads = kv_int(archive.config, "n_heads", -1);
  const int n_tokens = kv_int(archive.config, "n_tokens", -1);
  if (trace.k < 1 || trace.n_enc_layers < 0 || trace.n_dec_layers < 0 || trace.n_heads < 0 ||
      n_tokens < 0) {
    throw ValidationError("trace file has missing or bad metadata: " + path);
  }

  auto need = [&archive, &path](const std::string& name) -> const ArchiveTensor& {
    const ArchiveTensor* t = archive.find(name);
    if (!t) throw ValidationError("trace file is missing tensor '" + name + "': " + path);
    return *t;
  };
  auto as_doubles = [](const ArchiveTensor& t) {
    return std::vector<double>(t.values.begin(), t.values.end());
  };

  for (int l = 0; l < trace.n_enc_layers; ++l) {
    std::vector<std::vector<double>> heads;
    for (int h = 0; h < trace.n_heads; ++h) {
      heads.push_back(as_doubles(need("enc." + std::to_string(l) + "." + std::to_string(h))));
    }
    trace.encoder_self.push_back(std::move(heads));
  }
  for (int i = 0; i < n_tokens; ++i) {
    std::vector<std::vector<std::vector<double>>> token;
    for (int l = 0; l < trace.n_dec_layers; ++l) {
      std::vector<std::vector<double>> heads;
      for (int h = 0; h < trace.n_heads; ++h) {
        heads.push_back(as_doubles(need("cross." + std::to_string(i) + "." + std::to_string(l) +
                                        "." + std::to_string(h))));
      }
      token.push_back(std::move(heads));
    }
    trace.decoder_cross.push_back(std::move(token));
  }
  for (float v : need("doc_index").values) trace.doc_index.push_back(static_cast<int>(v));
  for (float v : need("sod_mask").values) trace.sod_mask.push_back(v != 0.0f);
  for (float v : need("pad_mask").values) trace.pad_mask.push_back(v != 0.0f);
  validate_trace(trace);
  return trace;
}

}  // namespace hiersum
