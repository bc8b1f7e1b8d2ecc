#pragma once

#include <cstdint>
#include <vector>

namespace hiersum {

/// Dense boolean attention-permission matrix: allow(q, k) == true means
/// query position q may attend key position k.
class AttentionMaskMatrix {
 public:
  AttentionMaskMatrix() = default;
  AttentionMaskMatrix(int query_len, int key_len, bool allow_all = false)
      : rows_(query_len),
        cols_(key_len),
        allow_(static_cast<size_t>(query_len) * key_len, allow_all ? 1 : 0) {}

  int query_len() const { return rows_; }
  int key_len() const { return cols_; }

  bool allow(int q, int k) const { return allow_[static_cast<size_t>(q) * cols_ + k] != 0; }
  void set(int q, int k, bool v) { allow_[static_cast<size_t>(q) * cols_ + k] = v ? 1 : 0; }

  bool operator==(const AttentionMaskMatrix&) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<uint8_t> allow_;
};

/// Baseline pattern: every query may attend every non-PAD key.
AttentionMaskMatrix full_mask(const std::vector<bool>& is_pad);

/// Document-restricted pattern. Ordinary tokens attend only keys of their
/// own document; start-of-document tokens additionally attend the other
/// documents' start tokens. PAD keys are denied everywhere.
///
/// doc_index holds the document ordinal per position (negative sentinel at
/// PAD positions); sod_mask marks each document's leading token. A sod_mask
/// entry away from a document boundary is rejected.
AttentionMaskMatrix hierarchical_mask(const std::vector<int>& doc_index,
                                      const std::vector<bool>& sod_mask,
                                      const std::vector<bool>& is_pad);

/// Lower-triangular pattern for decoder self-attention: allow(q, k) iff k <= q.
AttentionMaskMatrix causal_mask(int len);

}  // namespace hiersum
