#include "hiersum/masks.hpp"

#include <string>

#include "hiersum/errors.hpp"

namespace hiersum {

AttentionMaskMatrix full_mask(const std::vector<bool>& is_pad) {
  const int k = static_cast<int>(is_pad.size());
  AttentionMaskMatrix mask(k, k);
  for (int q = 0; q < k; ++q) {
    for (int j = 0; j < k; ++j) {
      mask.set(q, j, !is_pad[j]);
    }
  }
  return mask;
}

AttentionMaskMatrix hierarchical_mask(const std::vector<int>& doc_index,
                                      const std::vector<bool>& sod_mask,
                                      const std::vector<bool>& is_pad) {
  const int k = static_cast<int>(doc_index.size());
  if (static_cast<int>(sod_mask.size()) != k || static_cast<int>(is_pad.size()) != k) {
    throw ValidationError("hierarchical_mask: doc_index/sod_mask/is_pad lengths differ");
  }
  for (int p = 0; p < k; ++p) {
    if (is_pad[p]) continue;
    const bool at_boundary = (p == 0) || is_pad[p - 1] || doc_index[p] != doc_index[p - 1];
    if (sod_mask[p] && !at_boundary) {
      throw ValidationError("hierarchical_mask: sod_mask set at position " + std::to_string(p) +
                            " which is not the first position of document " +
                            std::to_string(doc_index[p]));
    }
  }

  AttentionMaskMatrix mask(k, k);
  for (int q = 0; q < k; ++q) {
    if (is_pad[q]) continue;  // PAD query rows stay all-denied
    for (int j = 0; j < k; ++j) {
      if (is_pad[j]) continue;
      const bool same_doc = doc_index[j] == doc_index[q];
      mask.set(q, j, same_doc || (sod_mask[q] && sod_mask[j]));
    }
  }
  return mask;
}

AttentionMaskMatrix causal_mask(int len) {
  if (len < 1) throw ValidationError("causal_mask: length must be >= 1");
  AttentionMaskMatrix mask(len, len);
  for (int q = 0; q < len; ++q) {
    for (int j = 0; j <= q; ++j) {
      mask.set(q, j, true);
    }
  }
  return mask;
}

}  // namespace hiersum
