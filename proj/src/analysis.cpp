#include "hiersum/analysis.hpp"

#include <algorithm>
#include <cmath>

#include "hiersum/errors.hpp"

namespace hiersum {

SelfDocReport self_doc_mass(std::span<const AttentionTrace> traces) {
  if (traces.empty()) throw ValidationError("no traces to analyze");
  SelfDocReport report;
  for (const AttentionTrace& trace : traces) {
    if (trace.encoder_self.empty()) {
      throw ValidationError("trace has no encoder self-attention weights");
    }
    const size_t k = static_cast<size_t>(trace.k);
    double token_sum = 0.0;
    int token_count = 0;
    for (size_t q = 0; q < k; ++q) {
      if (trace.pad_mask[q] || trace.sod_mask[q]) continue;
      const int own = trace.doc_index[q];
      double head_sum = 0.0;
      int head_count = 0;
      for (const auto& heads : trace.encoder_self) {
        for (const auto& w : heads) {
          double same = 0.0;
          double total = 0.0;
          for (size_t key = 0; key < k; ++key) {
            if (trace.pad_mask[key]) continue;
            total += w[q * k + key];
            if (trace.doc_index[key] == own) same += w[q * k + key];
          }
          if (total > 0.0) {
            head_sum += same / total;
            ++head_count;
          }
        }
      }
      if (head_count > 0) {
        token_sum += head_sum / head_count;
        ++token_count;
      }
    }
    if (token_count == 0) throw ValidationError("trace has no non-SOD source tokens");
    report.per_example.push_back(token_sum / token_count);
  }
  double sum = 0.0;
  for (double v : report.per_example) sum += v;
  report.corpus_mean = sum / static_cast<double>(report.per_example.size());
  return report;
}

double cds_from_aggregates(std::span<const double> aggregates) {
  const size_t n = aggregates.size();
  if (n < 2) throw ValidationError("cross-document deviation needs at least two documents");
  const double hi = *std::max_element(aggregates.begin(), aggregates.end());
  std::vector<double> p(n);
  double denom = 0.0;
  for (size_t i = 0; i < n; ++i) {
    p[i] = std::exp(aggregates[i] - hi);
    denom += p[i];
  }
  double mean = 0.0;
  for (size_t i = 0; i < n; ++i) {
    p[i] /= denom;
    mean += p[i];
  }
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : p) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(n));
}

CdsReport cds(std::span<const AttentionTrace> traces) {
  if (traces.empty()) throw ValidationError("no traces to analyze");
  CdsReport report;
  for (const AttentionTrace& trace : traces) {
    if (trace.decoder_cross.empty()) {
      throw ValidationError("trace has no decoder cross-attention weights");
    }
    const int n_docs = trace.n_docs();
    if (n_docs < 2) {
      throw ValidationError("cross-document deviation is undefined for a single document");
    }
    const size_t k = static_cast<size_t>(trace.k);
    std::vector<double> per_token;
    for (const auto& token : trace.decoder_cross) {
      std::vector<double> mean_w(k, 0.0);
      int heads = 0;
      for (const auto& layer : token) {
        for (const auto& w : layer) {
          for (size_t key = 0; key < k; ++key) mean_w[key] += w[key];
          ++heads;
        }
      }
      if (heads == 0) throw ValidationError("trace token has no cross-attention rows");
      for (double& v : mean_w) v /= heads;
      std::vector<double> aggregates(n_docs, 0.0);
      for (size_t key = 0; key < k; ++key) {
        if (trace.pad_mask[key]) continue;
        aggregates[trace.doc_index[key]] += mean_w[key];
      }
      per_token.push_back(cds_from_aggregates(aggregates));
    }
    double sum = 0.0;
    for (double v : per_token) sum += v;
    report.per_example.push_back(sum / static_cast<double>(per_token.size()));
    report.per_token.push_back(std::move(per_token));
  }
  double sum = 0.0;
  for (double v : report.per_example) sum += v;
  report.corpus_mean = sum / static_cast<double>(report.per_example.size());
  return report;
}

}  // namespace hiersum
