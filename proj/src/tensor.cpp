#include "hiersum/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>

#include "hiersum/errors.hpp"

namespace hiersum {

namespace {

using detail::Node;

std::shared_ptr<Node> make_leaf(std::vector<int> shape, std::vector<double> data,
                                bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

std::string shape_to_str(const std::vector<int>& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

// Builds an op node: output value plus the adjoint rule, recorded only when
// some input requires grad.
std::shared_ptr<Node> make_op(std::vector<int> shape, std::vector<double> value,
                              std::vector<std::shared_ptr<Node>> parents,
                              std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p->requires_grad;
  if (needs) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backward = std::move(backward_fn);
  }
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes differ: " + a.shape_str() + " vs " +
                     b.shape_str());
  }
}

// Interprets a 1D tensor as a single row so row-wise ops cover both ranks.
void rows_cols(const Tensor& t, int& r, int& c, const char* op) {
  if (t.ndim() == 1) {
    r = 1;
    c = t.shape()[0];
  } else if (t.ndim() == 2) {
    r = t.shape()[0];
    c = t.shape()[1];
  } else {
    throw ShapeError(std::string(op) + ": expected 1D or 2D tensor, got " + t.shape_str());
  }
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(std::vector<int> shape, double v, bool requires_grad) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return Tensor(make_leaf(std::move(shape), std::vector<double>(n, v), requires_grad));
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  if (n != static_cast<int64_t>(data.size())) {
    throw ShapeError("from_data: shape " + shape_to_str(shape) + " wants " + std::to_string(n) +
                     " values, got " + std::to_string(data.size()));
  }
  return Tensor(make_leaf(std::move(shape), std::move(data), requires_grad));
}

Tensor Tensor::scalar(double v) { return Tensor(make_leaf({}, {v}, false)); }

int Tensor::rows() const {
  int r, c;
  rows_cols(*this, r, c, "rows");
  return r;
}

int Tensor::cols() const {
  int r, c;
  rows_cols(*this, r, c, "cols");
  return c;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str() + " is not a scalar");
  return node_->value[0];
}

std::string Tensor::shape_str() const { return shape_to_str(node_->shape); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw ShapeError("matmul: expected 2D operands, got " + a.shape_str() + " and " +
                     b.shape_str());
  }
  const int m = a.shape()[0], k = a.shape()[1];
  const int k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw ShapeError("matmul: inner dimensions differ: " + a.shape_str() + " vs " +
                     b.shape_str());
  }
  std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (int i = 0; i < m; ++i) {
    double* po = out.data() + static_cast<size_t>(i) * n;
    const double* ra = pa + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double av = ra[p];
      if (av == 0.0) continue;
      const double* rb = pb + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) po[j] += av * rb[j];
    }
  }

  auto an = a.node(), bn = b.node();
  auto bw = [m, k, n, an, bn](Node& self) {
    const double* g = self.grad.data();
    if (an->requires_grad) {
      an->ensure_grad();
      // dA = dC * B^T
      double* da = an->grad.data();
      const double* pb = bn->value.data();
      for (int i = 0; i < m; ++i) {
        const double* gi = g + static_cast<size_t>(i) * n;
        double* dai = da + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
          const double* rb = pb + static_cast<size_t>(p) * n;
          double acc = 0.0;
          for (int j = 0; j < n; ++j) acc += gi[j] * rb[j];
          dai[p] += acc;
        }
      }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      // dB = A^T * dC
      double* db = bn->grad.data();
      const double* pa = an->value.data();
      for (int p = 0; p < k; ++p) {
        double* dbp = db + static_cast<size_t>(p) * n;
        for (int i = 0; i < m; ++i) {
          const double av = pa[static_cast<size_t>(i) * k + p];
          if (av == 0.0) continue;
          const double* gi = g + static_cast<size_t>(i) * n;
          for (int j = 0; j < n; ++j) dbp[j] += av * gi[j];
        }
      }
    }
  };
  return Tensor::wrap(make_op({m, n}, std::move(out), {an, bn}, bw));
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw ShapeError("transpose: expected 2D tensor, got " + a.shape_str());
  const int r = a.shape()[0], c = a.shape()[1];
  std::vector<double> out(static_cast<size_t>(r) * c);
  const double* pa = a.data().data();
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(j) * r + i] = pa[static_cast<size_t>(i) * c + j];
  auto an = a.node();
  auto bw = [r, c, an](Node& self) {
    an->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        an->grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j) * r + i];
  };
  return Tensor::wrap(make_op({c, r}, std::move(out), {an}, bw));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.data()[i];
  auto an = a.node(), bn = b.node();
  auto bw = [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    }
  };
  return Tensor::wrap(make_op(a.shape(), std::move(out), {an, bn}, bw));
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.data()[i];
  auto an = a.node(), bn = b.node();
  auto bw = [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }
  };
  return Tensor::wrap(make_op(a.shape(), std::move(out), {an, bn}, bw));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> out(a.data().begin(), a.data().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.data()[i];
  auto an = a.node(), bn = b.node();
  auto bw = [an, bn](Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i] * an->value[i];
    }
  };
  return Tensor::wrap(make_op(a.shape(), std::move(out), {an, bn}, bw));
}

Tensor scale(const Tensor& a, double s) {
  std::vector<double> out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  auto an = a.node();
  auto bw = [an, s](Node& self) {
    an->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
  };
  return Tensor::wrap(make_op(a.shape(), std::move(out), {an}, bw));
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  int r, c;
  rows_cols(x, r, c, "add_bias");
  if (bias.ndim() != 1 || bias.shape()[0] != c) {
    throw ShapeError("add_bias: bias " + bias.shape_str() + " does not match columns of " +
                     x.shape_str());
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out[static_cast<size_t>(i) * c + j] += bias.data()[j];
  auto xn = x.node(), bn = bias.node();
  auto bw = [r, c, xn, bn](Node& self) {
    if (xn->requires_grad) {
      xn->ensure_grad();
      for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) bn->grad[j] += self.grad[static_cast<size_t>(i) * c + j];
    }
  };
  return Tensor::wrap(make_op(x.shape(), std::move(out), {xn, bn}, bw));
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  auto xn = x.node();
  auto bw = [xn](Node& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (xn->value[i] > 0.0) xn->grad[i] += self.grad[i];
  };
  return Tensor::wrap(make_op(x.shape(), std::move(out), {xn}, bw));
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  auto xn = x.node();
  auto bw = [xn](Node& self) {
    xn->ensure_grad();
    const double g = self.grad[0];
    for (size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
  };
  return Tensor::wrap(make_op({}, {acc}, {xn}, bw));
}

Tensor masked_softmax(const Tensor& scores, const AttentionMaskMatrix* mask) {
  int r, c;
  rows_cols(scores, r, c, "masked_softmax");
  if (mask) {
    if (mask->key_len() != c || (mask->query_len() != r && mask->query_len() != 1)) {
      throw ShapeError("masked_softmax: mask " + std::to_string(mask->query_len()) + "x" +
                       std::to_string(mask->key_len()) + " does not broadcast to scores " +
                       scores.shape_str());
    }
  }
  std::vector<double> out(static_cast<size_t>(r) * c, 0.0);
  const double* ps = scores.data().data();
  for (int i = 0; i < r; ++i) {
    const int mrow = (mask && mask->query_len() == 1) ? 0 : i;
    const double* row = ps + static_cast<size_t>(i) * c;
    double* orow = out.data() + static_cast<size_t>(i) * c;
    // Max over allowed entries only; denied ones never enter the arithmetic,
    // so their weights stay exactly zero.
    double mx = -std::numeric_limits<double>::infinity();
    int allowed = 0;
    for (int j = 0; j < c; ++j) {
      if (mask && !mask->allow(mrow, j)) continue;
      ++allowed;
      mx = std::max(mx, row[j]);
    }
    if (allowed == 0) {
      throw ValidationError("masked_softmax: every position of row " + std::to_string(i) +
                            " is denied");
    }
    double denom = 0.0;
    for (int j = 0; j < c; ++j) {
      if (mask && !mask->allow(mrow, j)) continue;
      const double e = std::exp(row[j] - mx);
      orow[j] = e;
      denom += e;
    }
    for (int j = 0; j < c; ++j) {
      if (mask && !mask->allow(mrow, j)) continue;
      orow[j] /= denom;
    }
  }

  auto sn = scores.node();
  auto bw = [r, c, sn](Node& self) {
    sn->ensure_grad();
    // dL/ds_j = y_j * (g_j - sum_k g_k y_k); zero weights keep zero grads.
    for (int i = 0; i < r; ++i) {
      const double* y = self.value.data() + static_cast<size_t>(i) * c;
      const double* g = self.grad.data() + static_cast<size_t>(i) * c;
      double dot = 0.0;
      for (int j = 0; j < c; ++j) dot += g[j] * y[j];
      double* ds = sn->grad.data() + static_cast<size_t>(i) * c;
      for (int j = 0; j < c; ++j) ds[j] += y[j] * (g[j] - dot);
    }
  };
  return Tensor::wrap(make_op(scores.shape(), std::move(out), {sn}, bw));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  int r, c;
  rows_cols(x, r, c, "layer_norm");
  if (gain.ndim() != 1 || gain.shape()[0] != c || bias.ndim() != 1 || bias.shape()[0] != c) {
    throw ShapeError("layer_norm: gain " + gain.shape_str() + " / bias " + bias.shape_str() +
                     " do not match last dimension of " + x.shape_str());
  }
  std::vector<double> out(static_cast<size_t>(r) * c);
  std::vector<double> xhat(static_cast<size_t>(r) * c);
  std::vector<double> inv_sigma(r);
  const double* px = x.data().data();
  const double* pg = gain.data().data();
  const double* pb = bias.data().data();
  for (int i = 0; i < r; ++i) {
    const double* row = px + static_cast<size_t>(i) * c;
    double mean = 0.0;
    for (int j = 0; j < c; ++j) mean += row[j];
    mean /= c;
    double var = 0.0;  // population variance
    for (int j = 0; j < c; ++j) {
      const double d = row[j] - mean;
      var += d * d;
    }
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = inv;
    for (int j = 0; j < c; ++j) {
      const double h = (row[j] - mean) * inv;
      xhat[static_cast<size_t>(i) * c + j] = h;
      out[static_cast<size_t>(i) * c + j] = h * pg[j] + pb[j];
    }
  }

  auto xn = x.node(), gn = gain.node(), bn = bias.node();
  auto bw = [r, c, xn, gn, bn, xhat = std::move(xhat), inv_sigma = std::move(inv_sigma)](Node& self) {
    for (int i = 0; i < r; ++i) {
      const double* g = self.grad.data() + static_cast<size_t>(i) * c;
      const double* h = xhat.data() + static_cast<size_t>(i) * c;
      if (gn->requires_grad) {
        gn->ensure_grad();
        for (int j = 0; j < c; ++j) gn->grad[j] += g[j] * h[j];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (int j = 0; j < c; ++j) bn->grad[j] += g[j];
      }
      if (xn->requires_grad) {
        xn->ensure_grad();
        // dL/dx = inv_sigma * (dy*gain - mean(dy*gain) - xhat * mean(dy*gain*xhat))
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (int j = 0; j < c; ++j) {
          const double dh = g[j] * gn->value[j];
          mean_dh += dh;
          mean_dh_h += dh * h[j];
        }
        mean_dh /= c;
        mean_dh_h /= c;
        double* dx = xn->grad.data() + static_cast<size_t>(i) * c;
        for (int j = 0; j < c; ++j) {
          const double dh = g[j] * gn->value[j];
          dx[j] += inv_sigma[i] * (dh - mean_dh - h[j] * mean_dh_h);
        }
      }
    }
  };
  return Tensor::wrap(make_op(x.shape(), std::move(out), {xn, gn, bn}, bw));
}

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
  if (table.ndim() != 2) {
    throw ShapeError("embedding_lookup: table must be 2D, got " + table.shape_str());
  }
  const int v = table.shape()[0], d = table.shape()[1];
  const int n = static_cast<int>(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw ValidationError("embedding_lookup: id " + std::to_string(id) +
                            " outside table of size " + std::to_string(v));
    }
  }
  std::vector<double> out(static_cast<size_t>(n) * d);
  const double* pt = table.data().data();
  for (int i = 0; i < n; ++i) {
    std::copy_n(pt + static_cast<size_t>(ids[i]) * d, d, out.data() + static_cast<size_t>(i) * d);
  }
  auto tn = table.node();
  std::vector<int> ids_copy(ids.begin(), ids.end());
  auto bw = [n, d, tn, ids_copy = std::move(ids_copy)](Node& self) {
    tn->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const double* g = self.grad.data() + static_cast<size_t>(i) * d;
      double* dst = tn->grad.data() + static_cast<size_t>(ids_copy[i]) * d;
      for (int j = 0; j < d; ++j) dst[j] += g[j];
    }
  };
  return Tensor::wrap(make_op({n, d}, std::move(out), {tn}, bw));
}

namespace {

Tensor cross_entropy_impl(const Tensor& logits, std::span<const int> targets, int ignore_id,
                          bool mean, int* count_out) {
  int t, v;
  rows_cols(logits, t, v, "cross_entropy");
  if (static_cast<int>(targets.size()) != t) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(t) + " logit rows");
  }
  int count = 0;
  for (int y : targets) {
    if (y == ignore_id) continue;
    if (y < 0 || y >= v) {
      throw ValidationError("cross_entropy: target " + std::to_string(y) +
                            " outside vocabulary of size " + std::to_string(v));
    }
    ++count;
  }
  if (count == 0) throw ValidationError("cross_entropy: every position is ignored");
  if (count_out) *count_out = count;

  // Keep row softmax around: the adjoint is (softmax - onehot) / count.
  std::vector<double> probs(static_cast<size_t>(t) * v);
  const double* pl = logits.data().data();
  double nll = 0.0;
  for (int i = 0; i < t; ++i) {
    const double* row = pl + static_cast<size_t>(i) * v;
    double* prow = probs.data() + static_cast<size_t>(i) * v;
    double mx = row[0];
    for (int j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double denom = 0.0;
    for (int j = 0; j < v; ++j) {
      prow[j] = std::exp(row[j] - mx);
      denom += prow[j];
    }
    for (int j = 0; j < v; ++j) prow[j] /= denom;
    if (targets[i] != ignore_id) {
      nll -= (row[targets[i]] - mx) - std::log(denom);
    }
  }
  const double denom_rows = mean ? count : 1;
  const double loss = nll / denom_rows;

  auto ln = logits.node();
  std::vector<int> tgt(targets.begin(), targets.end());
  auto bw = [t, v, ln, ignore_id, denom_rows, probs = std::move(probs),
             tgt = std::move(tgt)](Node& self) {
    ln->ensure_grad();
    const double g = self.grad[0] / denom_rows;
    for (int i = 0; i < t; ++i) {
      if (tgt[i] == ignore_id) continue;  // ignored rows get exactly zero grad
      const double* prow = probs.data() + static_cast<size_t>(i) * v;
      double* drow = ln->grad.data() + static_cast<size_t>(i) * v;
      for (int j = 0; j < v; ++j) drow[j] += g * prow[j];
      drow[tgt[i]] -= g;
    }
  };
  return Tensor::wrap(make_op({}, {loss}, {ln}, bw));
}

}  // namespace

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets, int ignore_id) {
  return cross_entropy_impl(logits, targets, ignore_id, true, nullptr);
}

Tensor cross_entropy_sum(const Tensor& logits, std::span<const int> targets, int ignore_id,
                         int* non_ignored_count) {
  return cross_entropy_impl(logits, targets, ignore_id, false, non_ignored_count);
}

Tensor slice_rows(const Tensor& x, int begin, int count) {
  int r, c;
  rows_cols(x, r, c, "slice_rows");
  if (begin < 0 || count < 0 || begin + count > r) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside " + x.shape_str());
  }
  std::vector<double> out(x.data().begin() + static_cast<size_t>(begin) * c,
                          x.data().begin() + static_cast<size_t>(begin + count) * c);
  auto xn = x.node();
  auto bw = [begin, count, c, xn](Node& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      xn->grad[static_cast<size_t>(begin) * c + i] += self.grad[i];
    }
  };
  return Tensor::wrap(make_op({count, c}, std::move(out), {xn}, bw));
}

Tensor slice_cols(const Tensor& x, int begin, int count) {
  int r, c;
  rows_cols(x, r, c, "slice_cols");
  if (begin < 0 || count < 0 || begin + count > c) {
    throw ShapeError("slice_cols: range [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") outside " + x.shape_str());
  }
  std::vector<double> out(static_cast<size_t>(r) * count);
  const double* px = x.data().data();
  for (int i = 0; i < r; ++i)
    std::copy_n(px + static_cast<size_t>(i) * c + begin, count,
                out.data() + static_cast<size_t>(i) * count);
  auto xn = x.node();
  auto bw = [r, c, begin, count, xn](Node& self) {
    xn->ensure_grad();
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < count; ++j)
        xn->grad[static_cast<size_t>(i) * c + begin + j] +=
            self.grad[static_cast<size_t>(i) * count + j];
  };
  return Tensor::wrap(make_op({r, count}, std::move(out), {xn}, bw));
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no parts");
  const int r = parts[0].rows();
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rows() != r) {
      throw ShapeError("concat_cols: row counts differ: " + parts[0].shape_str() + " vs " +
                       p.shape_str());
    }
    total += p.cols();
  }
  std::vector<double> out(static_cast<size_t>(r) * total);
  int off = 0;
  for (const Tensor& p : parts) {
    const int pc = p.cols();
    for (int i = 0; i < r; ++i)
      std::copy_n(p.data().data() + static_cast<size_t>(i) * pc, pc,
                  out.data() + static_cast<size_t>(i) * total + off);
    off += pc;
  }
  std::vector<std::shared_ptr<detail::Node>> parents;
  std::vector<int> widths;
  for (const Tensor& p : parts) {
    parents.push_back(p.node());
    widths.push_back(p.cols());
  }
  auto bw = [r, total, parents, widths](Node& self) {
    int off = 0;
    for (size_t pi = 0; pi < parents.size(); ++pi) {
      const int pc = widths[pi];
      if (parents[pi]->requires_grad) {
        parents[pi]->ensure_grad();
        for (int i = 0; i < r; ++i)
          for (int j = 0; j < pc; ++j)
            parents[pi]->grad[static_cast<size_t>(i) * pc + j] +=
                self.grad[static_cast<size_t>(i) * total + off + j];
      }
      off += pc;
    }
  };
  return Tensor::wrap(make_op({r, total}, std::move(out), std::move(parents), bw));
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng) {
  if (p < 0.0 || p >= 1.0) throw ValidationError("dropout: p must be in [0,1)");
  if (p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  std::vector<double> mask(x.numel());
  const double inv_keep = 1.0 / (1.0 - p);
  for (double& m : mask) m = keep(rng) ? inv_keep : 0.0;
  std::vector<double> out(x.data().begin(), x.data().end());
  for (size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  auto xn = x.node();
  auto bw = [xn, mask = std::move(mask)](Node& self) {
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * mask[i];
  };
  return Tensor::wrap(make_op(x.shape(), std::move(out), {xn}, bw));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar tensor");
  }
  auto root = loss.node();
  if (!root->requires_grad) {
    throw ValidationError("backward: loss is not connected to any differentiable input");
  }

  // Iterative DFS post-order; processing the order back-to-front visits each
  // node exactly once, after everything that consumes it.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> visited;
  std::vector<std::pair<detail::Node*, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  visited.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior grads are scratch space for this pass; only leaves accumulate
  // across calls.
  for (detail::Node* n : order) {
    if (n->backward) {
      n->grad.assign(n->value.size(), 0.0);
    } else {
      n->ensure_grad();
    }
  }
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace hiersum
