#pragma once

#include <span>
#include <vector>

#include "hiersum/data.hpp"
#include "hiersum/tensor.hpp"

namespace hiersum {

/// Half-open source range [begin, end) of one document within a
/// concatenated row. With start-of-document tokens on, begin is the
/// document's start token.
struct DocSpan {
  int begin = 0;
  int end = 0;
  bool operator==(const DocSpan&) const = default;
};

/// Reads the contiguous document layout of row b from doc_index; PAD tail
/// excluded. Rejects rows whose documents are interleaved.
std::vector<DocSpan> doc_spans_of_row(const MultiDocBatch& batch, int b);

/// Document-scaled attention weights. For each query row of scores [T,K]:
/// softmax is taken separately inside every document span, a scaling
/// factor per document comes from a softmax over the documents' first-
/// position (start-token) scores, and each in-document weight is
/// multiplied by its document's factor. All weights over a row therefore
/// still sum to 1, while the per-document totals equal the scaling
/// factors.
///
/// doc_scaling, when given, receives the factors row-major [T, n_docs].
Tensor doc_scaled_softmax(const Tensor& scores, std::span<const DocSpan> spans,
                          std::vector<double>* doc_scaling = nullptr);

}  // namespace hiersum
