#include "hiersum/hier_attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "hiersum/errors.hpp"

namespace hiersum {

std::vector<DocSpan> doc_spans_of_row(const MultiDocBatch& batch, int b) {
  if (b < 0 || b >= batch.batch) {
    throw ValidationError("doc_spans_of_row: row " + std::to_string(b) + " outside batch of " +
                          std::to_string(batch.batch));
  }
  const int offset = b * batch.src_len;
  const int len = batch.src_rows[b];
  std::vector<DocSpan> spans;
  for (int p = 0; p < len; ++p) {
    const int doc = batch.doc_index[offset + p];
    if (doc < 0) throw ValidationError("doc_spans_of_row: PAD inside the unpadded prefix");
    if (spans.empty() || doc != static_cast<int>(spans.size()) - 1) {
      if (doc != static_cast<int>(spans.size())) {
        throw ValidationError("doc_spans_of_row: document ordinals must be contiguous and "
                              "non-decreasing, saw " +
                              std::to_string(doc) + " after " + std::to_string(spans.size() - 1) +
                              " documents");
      }
      spans.push_back({p, p + 1});
    } else {
      spans.back().end = p + 1;
    }
  }
  return spans;
}

namespace {

void validate_spans(std::span<const DocSpan> spans, int key_len) {
  if (spans.empty()) throw ValidationError("doc_scaled_softmax: no document spans");
  int expect = 0;
  for (const DocSpan& s : spans) {
    if (s.begin != expect || s.end <= s.begin) {
      throw ValidationError("doc_scaled_softmax: spans must tile the key axis contiguously");
    }
    expect = s.end;
  }
  if (expect != key_len) {
    throw ValidationError("doc_scaled_softmax: spans cover " + std::to_string(expect) +
                          " keys, scores have " + std::to_string(key_len));
  }
}

}  // namespace

Tensor doc_scaled_softmax(const Tensor& scores, std::span<const DocSpan> spans,
                          std::vector<double>* doc_scaling) {
  if (scores.ndim() != 2) {
    throw ShapeError("doc_scaled_softmax: expected 2D scores, got " + scores.shape_str());
  }
  const int t = scores.shape()[0];
  const int k = scores.shape()[1];
  validate_spans(spans, k);
  const int n = static_cast<int>(spans.size());

  std::vector<double> out(static_cast<size_t>(t) * k);
  std::vector<double> scal(static_cast<size_t>(t) * n);
  const double* ps = scores.data().data();
  for (int row = 0; row < t; ++row) {
    const double* a = ps + static_cast<size_t>(row) * k;
    double* w = out.data() + static_cast<size_t>(row) * k;
    double* s = scal.data() + static_cast<size_t>(row) * n;

    double zmax = -std::numeric_limits<double>::infinity();
    for (int d = 0; d < n; ++d) zmax = std::max(zmax, a[spans[d].begin]);
    double zsum = 0.0;
    for (int d = 0; d < n; ++d) {
      s[d] = std::exp(a[spans[d].begin] - zmax);
      zsum += s[d];
    }
    for (int d = 0; d < n; ++d) s[d] /= zsum;

    for (int d = 0; d < n; ++d) {
      const DocSpan& span = spans[d];
      double amax = a[span.begin];
      for (int j = span.begin + 1; j < span.end; ++j) amax = std::max(amax, a[j]);
      double asum = 0.0;
      for (int j = span.begin; j < span.end; ++j) {
        w[j] = std::exp(a[j] - amax);
        asum += w[j];
      }
      for (int j = span.begin; j < span.end; ++j) w[j] = s[d] * (w[j] / asum);
    }
  }
  if (doc_scaling) *doc_scaling = scal;

  auto sn = scores.node();
  std::vector<DocSpan> spans_copy(spans.begin(), spans.end());
  auto bw = [t, k, n, sn, spans_copy = std::move(spans_copy),
             scal = std::move(scal)](detail::Node& self) {
    sn->ensure_grad();
    // Two softmax adjoints per row: the in-document one over p = w/s, and
    // the document-level one over s, whose gradient lands on each
    // document's first position.
    std::vector<double> gdoc(n);
    for (int row = 0; row < t; ++row) {
      const double* w = self.value.data() + static_cast<size_t>(row) * k;
      const double* g = self.grad.data() + static_cast<size_t>(row) * k;
      const double* s = scal.data() + static_cast<size_t>(row) * n;
      double* da = sn->grad.data() + static_cast<size_t>(row) * k;

      double total = 0.0;  // sum_d s_d * gdoc_d
      for (int d = 0; d < n; ++d) {
        const DocSpan& span = spans_copy[d];
        double acc = 0.0;
        if (s[d] > 0.0) {
          for (int j = span.begin; j < span.end; ++j) acc += g[j] * (w[j] / s[d]);
        }
        gdoc[d] = acc;
        total += s[d] * acc;
      }
      for (int d = 0; d < n; ++d) {
        const DocSpan& span = spans_copy[d];
        if (s[d] > 0.0) {
          for (int j = span.begin; j < span.end; ++j) {
            const double p = w[j] / s[d];
            da[j] += s[d] * p * (g[j] - gdoc[d]);
          }
        }
        da[span.begin] += s[d] * (gdoc[d] - total);
      }
    }
  };

  auto node = std::make_shared<detail::Node>();
  node->shape = {t, k};
  node->value = std::move(out);
  if (sn->requires_grad) {
    node->requires_grad = true;
    node->parents = {sn};
    node->backward = std::move(bw);
  }
  return Tensor::wrap(std::move(node));
}

}  // namespace hiersum
