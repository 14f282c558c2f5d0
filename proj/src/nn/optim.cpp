#include "pmc/nn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace pmc::nn {

Parameter::Parameter(std::string n, Tensor<float> value)
    : name(std::move(n)),
      var(leaf(std::move(value), true)),
      adam_m(var.shape(), 0.0f),
      adam_v(var.shape(), 0.0f) {}

void adam_step(const ParameterRefs& params, float lr, const AdamConfig& cfg) {
  for (Parameter* p : params) {
    Tensor<float>& value = p->value();
    if (!value.has_grad()) throw StateError("adam_step: parameter '" + p->name + "' has no gradient");
    if (p->adam_m.shape != value.shape) p->adam_m = Tensor<float>(value.shape, 0.0f);
    if (p->adam_v.shape != value.shape) p->adam_v = Tensor<float>(value.shape, 0.0f);
  }
  for (Parameter* p : params) {
    Tensor<float>& value = p->value();
    p->step_count += 1;
    const double t = static_cast<double>(p->step_count);
    const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), t);
    const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), t);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const float g = value.grad[i];
      float& m = p->adam_m.data[i];
      float& v = p->adam_v.data[i];
      m = cfg.beta1 * m + (1.0f - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0f - cfg.beta2) * g * g;
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      value.data[i] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
}

double global_grad_norm(const ParameterRefs& params) {
  double sq = 0.0;
  for (const Parameter* p : params) {
    for (float g : p->value().grad) sq += static_cast<double>(g) * g;
  }
  return std::sqrt(sq);
}

double clip_global_norm(const ParameterRefs& params, double max_norm) {
  if (!(max_norm > 0.0)) throw ConfigError("clip_global_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double s = max_norm / norm;
  for (Parameter* p : params) {
    for (float& g : p->value().grad) g = static_cast<float>(g * s);
  }
  return s;
}

void zero_grad(const ParameterRefs& params) {
  for (Parameter* p : params) p->zero_grad();
}

double TrainSchedule::lr() const {
  return std::max(base_lr * std::pow(factor, reductions), min_lr);
}

double plateau_step(TrainSchedule& s, double epoch_loss) {
  if (epoch_loss <= s.best_loss - kPlateauThreshold) {
    s.best_loss = epoch_loss;
    s.stale_epochs = 0;
  } else {
    s.stale_epochs += 1;
    if (s.stale_epochs > s.patience) {
      if (s.lr() > s.min_lr) s.reductions += 1;
      s.stale_epochs = 0;
    }
  }
  return s.lr();
}

void set_trainable(const ParameterRefs& params, bool on) {
  for (Parameter* p : params) p->set_trainable(on);
}

Tensor<float> uniform_tensor(Shape shape, float bound, std::mt19937_64& rng) {
  Tensor<float> t(std::move(shape));
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (float& v : t.data) v = dist(rng);
  return t;
}

Tensor<float> kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const float bound = std::sqrt(6.0f / static_cast<float>(std::max<std::size_t>(fan_in, 1)));
  return uniform_tensor(std::move(shape), bound, rng);
}

}  // namespace pmc::nn
