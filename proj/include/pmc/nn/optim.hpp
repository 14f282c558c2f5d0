#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pmc/nn/autograd.hpp"

namespace pmc::nn {

// A trainable tensor plus its Adam moment estimates.
struct Parameter {
  std::string name;
  Var<float> var;
  Tensor<float> adam_m;
  Tensor<float> adam_v;
  std::uint64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string n, Tensor<float> value);

  const Tensor<float>& value() const { return var.value(); }
  Tensor<float>& value() { return var.value(); }
  void zero_grad() { var.value().zero_grad(); }
  // Frozen parameters are constants on the tape: no gradient is computed for them.
  void set_trainable(bool on) { var.node()->requires_grad = on; }
  bool trainable() const { return var.requires_grad(); }
};

using ParameterRefs = std::vector<Parameter*>;

struct AdamConfig {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
};

// Bias-corrected Adam update; throws StateError if a parameter has no gradient.
void adam_step(const ParameterRefs& params, float lr, const AdamConfig& cfg = {});

// Scales all gradients by max_norm / ||g|| when the global L2 norm exceeds
// max_norm. Returns the applied scale (1.0 when untouched).
double clip_global_norm(const ParameterRefs& params, double max_norm);

double global_grad_norm(const ParameterRefs& params);

void zero_grad(const ParameterRefs& params);
void set_trainable(const ParameterRefs& params, bool on);

// Reduce-on-plateau learning-rate schedule in minimum-tracking mode.
struct TrainSchedule {
  double base_lr = 1e-4;
  double factor = 0.1;
  int patience = 10;
  double min_lr = 1e-6;
  double best_loss = std::numeric_limits<double>::infinity();
  int stale_epochs = 0;
  int reductions = 0;

  double lr() const;
};

inline constexpr double kPlateauThreshold = 1e-8;

// Feeds one epoch's loss to the schedule and returns the learning rate for the next epoch.
double plateau_step(TrainSchedule& schedule, double epoch_loss);

// Initializers; all draws come from the supplied engine.
Tensor<float> uniform_tensor(Shape shape, float bound, std::mt19937_64& rng);
Tensor<float> kaiming_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace pmc::nn
