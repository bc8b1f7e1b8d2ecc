#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "hiersum/tensor.hpp"

namespace hiersum::testutil {

inline double rel_err(double a, double b, double guard = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), guard});
}

inline Tensor rand_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0,
                          double hi = 1.0, bool requires_grad = true) {
  std::uniform_real_distribution<double> dist(lo, hi);
  int64_t n = 1;
  for (int d : shape) n *= d;
  std::vector<double> data(n);
  for (double& v : data) v = dist(rng);
  return Tensor::from_data(std::move(shape), std::move(data), requires_grad);
}

// Values bounded away from zero, for ops with a kink at the origin.
inline Tensor rand_tensor_away_from_zero(std::vector<int> shape, std::mt19937_64& rng,
                                         double min_abs = 0.1) {
  Tensor t = rand_tensor(std::move(shape), rng);
  for (double& v : t.data()) {
    if (std::abs(v) < min_abs) v += (v >= 0.0 ? min_abs : -min_abs);
  }
  return t;
}

/// Central-difference gradient check. loss_fn must rebuild the whole
/// expression from the leaves' current values on every call. Returns the
/// worst relative error between analytic and numeric gradient over all
/// leaf entries.
inline double gradcheck_max_rel_err(std::span<const Tensor> leaves,
                                    const std::function<Tensor()>& loss_fn, double h = 1e-5) {
  for (const Tensor& leaf : leaves) const_cast<Tensor&>(leaf).zero_grad();
  Tensor loss = loss_fn();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  for (const Tensor& leaf : leaves) {
    analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
  }

  double worst = 0.0;
  for (size_t li = 0; li < leaves.size(); ++li) {
    Tensor leaf = leaves[li];
    for (size_t i = 0; i < leaf.data().size(); ++i) {
      const double saved = leaf.data()[i];
      leaf.data()[i] = saved + h;
      const double up = loss_fn().item();
      leaf.data()[i] = saved - h;
      const double down = loss_fn().item();
      leaf.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, rel_err(analytic[li][i], numeric));
    }
  }
  return worst;
}

}  // namespace hiersum::testutil
