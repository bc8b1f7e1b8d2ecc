#include "hiersum/optim.hpp"

#include <cmath>

#include "hiersum/errors.hpp"

namespace hiersum {

void TrainConfig::validate() const {
  if (learning_rate < 0.0) throw ValidationError("learning_rate must be >= 0");
  if (beta1 < 0.0 || beta1 >= 1.0) throw ValidationError("beta1 must be in [0, 1)");
  if (beta2 < 0.0 || beta2 >= 1.0) throw ValidationError("beta2 must be in [0, 1)");
  if (eps <= 0.0) throw ValidationError("eps must be > 0");
  if (warmup_steps < 0) throw ValidationError("warmup_steps must be >= 0");
  if (weight_decay < 0.0) throw ValidationError("weight_decay must be >= 0");
  if (grad_clip < 0.0) throw ValidationError("grad_clip must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (max_steps < 0) throw ValidationError("max_steps must be >= 0");
  if (eval_every < 0) throw ValidationError("eval_every must be >= 0");
}

void adam_step(std::vector<std::pair<std::string, Tensor>>& params, OptimizerState& state,
               const TrainConfig& config) {
  config.validate();
  for (auto& [name, p] : params) {
    for (double g : p.grad()) {
      if (!std::isfinite(g)) {
        throw ValidationError("non-finite gradient in parameter '" + name + "'");
      }
    }
  }
  const int64_t t = state.step + 1;
  double lr = config.learning_rate;
  if (config.warmup_steps > 0) {
    lr *= std::min(1.0, static_cast<double>(t) / static_cast<double>(config.warmup_steps));
  }
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (auto& [name, p] : params) {
    auto& mom = state.moments[name];
    const size_t n = p.numel();
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    } else if (mom.m.size() != n || mom.v.size() != n) {
      throw ShapeError("optimizer moments for '" + name + "' do not match the parameter size");
    }
    std::span<double> g = p.grad();
    std::span<double> value = p.data();
    for (size_t i = 0; i < n; ++i) {
      mom.m[i] = config.beta1 * mom.m[i] + (1.0 - config.beta1) * g[i];
      mom.v[i] = config.beta2 * mom.v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double mhat = mom.m[i] / bc1;
      const double vhat = mom.v[i] / bc2;
      value[i] -= lr * mhat / (std::sqrt(vhat) + config.eps);
      if (config.weight_decay > 0.0) value[i] -= lr * config.weight_decay * value[i];
    }
  }
  state.step = t;
}

double global_grad_norm(std::span<const std::pair<std::string, Tensor>> params) {
  double sq = 0.0;
  for (const auto& [name, p] : params) {
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_gradients(std::vector<std::pair<std::string, Tensor>>& params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& [name, p] : params) {
      for (double& g : p.grad()) g *= scale;
    }
  }
  return norm;
}

}  // namespace hiersum
