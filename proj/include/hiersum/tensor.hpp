#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hiersum/masks.hpp"

namespace hiersum {

namespace detail {

// One node of the recorded computation. The forward pass links nodes into a
// DAG (parents point toward inputs); backward() replays adjoints over that
// record in reverse topological order.
struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // allocated on demand, same length as value
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad, accumulates into parents' grads. Empty for leaves.
  std::function<void(Node&)> backward;

  int64_t numel() const {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major tensor of 64-bit floats. Copying a Tensor copies a handle
/// to the shared node; values are treated as immutable once an op has
/// consumed them (parameters are mutated only between steps, by the
/// optimizer, through data()).
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
  static Tensor full(std::vector<int> shape, double v, bool requires_grad = false);
  static Tensor from_data(std::vector<int> shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const { return node_->shape; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int64_t numel() const { return node_->numel(); }
  // 2D helpers; 1D tensors read as a single row.
  int rows() const;
  int cols() const;

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  bool requires_grad() const { return node_->requires_grad; }
  /// Empty span until backward() has reached this tensor.
  std::span<const double> grad() const { return node_->grad; }
  /// Allocates a zero gradient if none exists yet.
  std::span<double> grad() { node_->ensure_grad(); return node_->grad; }
  void zero_grad() { if (node_) node_->grad.assign(node_->value.size(), 0.0); }

  double item() const;

  std::string shape_str() const;

  std::shared_ptr<detail::Node> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<detail::Node> n) { return Tensor(std::move(n)); }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
  std::shared_ptr<detail::Node> node_;
};

// ---- forward ops (gradients recorded when any input requires grad) ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// x: [R,C], bias: [C]; adds bias to every row.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
/// Sum of all entries, as a scalar tensor.
Tensor sum(const Tensor& x);

/// Row-wise softmax over the last axis of a 1D or 2D tensor. Denied
/// positions are excluded from the max/sum arithmetic entirely, so their
/// output weight is exactly zero. A row whose every position is denied is
/// a degenerate-row error. mask may be null (all positions allowed) and
/// may have a single query row, which broadcasts over all score rows.
Tensor masked_softmax(const Tensor& scores, const AttentionMaskMatrix* mask = nullptr);

/// Per-row normalization over the last axis: zero mean, unit variance with
/// population statistics, then elementwise gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

/// Gathers rows of table [V,d] by id; gradient scatter-adds into the table.
Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);

/// Mean negative log-softmax probability of targets over rows whose target
/// is not ignore_id. logits: [T,V].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id);
/// Sum (not mean) variant for combining several sequences into one batch
/// loss; reports the contributing row count through non_ignored_count.
Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets, int ignore_id,
                         int* non_ignored_count = nullptr);

Tensor slice_rows(const Tensor& x, int begin, int count);
Tensor slice_cols(const Tensor& x, int begin, int count);
Tensor concat_cols(std::span<const Tensor> parts);

/// Inverted dropout; identity when p == 0. The live mask is sampled from rng
/// at forward time and reused for the backward pass.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng);

/// Accumulates adjoints into every requires_grad node reachable from loss.
/// loss must be a connected scalar. Repeated calls accumulate further.
void backward(const Tensor& loss);

}  // namespace hiersum
