#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pmc/entropy/cdf.hpp"
#include "pmc/nn/optim.hpp"

namespace pmc::entropy {

inline constexpr double kLikelihoodFloor = 1e-9;
inline constexpr double kTailMass = 1e-9;
// Largest |symbol| searched when choosing a table range; anything beyond is
// reached through the escape symbols.
inline constexpr std::int32_t kMaxTableRadius = 2048;

enum class QuantizeMode { kTrain, kEval };

// Train: y + U[-0.5, 0.5) noise drawn from rng, gradient passes to y.
// Eval: round half away from zero, no gradient.
template <typename T>
nn::Var<T> quantize(const nn::Var<T>& y, QuantizeMode mode, std::mt19937_64* rng = nullptr);

// Per-channel density c(x) = sigmoid(f_4(...f_1(x))) with stage widths
// 1 -> 3 -> 3 -> 3 -> 1. Stage k: h = softplus(H_k) h + b_k, then for the
// first three stages h += tanh(a_k) * tanh(h).
inline constexpr std::array<std::size_t, 5> kDensityWidths{1, 3, 3, 3, 1};

template <typename T>
struct DensityParams {
  std::array<nn::Var<T>, 4> matrices;  // raw H_k, (C, out, in)
  std::array<nn::Var<T>, 4> biases;    // (C, out)
  std::array<nn::Var<T>, 3> factors;   // raw a_k, (C, out)

  std::size_t channels() const { return matrices[0].shape()[0]; }
};

// p = max(c(q + 0.5) - c(q - 0.5), kLikelihoodFloor) elementwise. Dimension 1
// of q is the channel axis. Differentiable in q and every density parameter.
template <typename T>
nn::Var<T> likelihood(const nn::Var<T>& q, const DensityParams<T>& density);

// sum_c |c(lo_c) - m/2| + |c(hi_c) - (1 - m/2)| with m = kTailMass.
// quantiles: (C, 2) holding (lo, hi). Only the quantiles receive gradients.
template <typename T>
nn::Var<T> aux_loss(const nn::Var<T>& quantiles, const DensityParams<T>& density);

class EntropyBottleneck {
 public:
  EntropyBottleneck() = default;
  // Training initialization: roughly a logistic of width init_scale with
  // small random biases.
  EntropyBottleneck(std::size_t channels, double init_scale, std::mt19937_64& rng,
                    const std::string& prefix = "entropy_bottleneck");

  // c(x) = sigmoid(x / scale) exactly, quantiles at the logistic tails.
  static EntropyBottleneck logistic(std::size_t channels, double scale = 1.0,
                                    const std::string& prefix = "entropy_bottleneck");

  std::size_t channels() const { return channels_; }

  DensityParams<float> density() const;
  nn::Var<float> likelihood(const nn::Var<float>& q) const;
  nn::Var<float> aux_loss() const;

  // Density parameters (main optimizer) and quantiles (auxiliary optimizer).
  nn::ParameterRefs parameters();
  nn::ParameterRefs aux_parameters();
  nn::Parameter& quantiles() { return quantiles_; }
  const nn::Parameter& quantiles() const { return quantiles_; }

  // Double-precision evaluation of the frozen density.
  double logit(std::size_t channel, double x) const;
  double cdf(std::size_t channel, double x) const;
  // Probability mass of the integer bin centred on q.
  double pmf(std::size_t channel, std::int32_t q) const;

  // Throws ModelIntegrityError if any channel decreases on the grid.
  void check_monotone(double lo = -50.0, double hi = 50.0, std::size_t points = 10001) const;

  CdfTableSet build_cdf_tables() const;

 private:
  void init_parameters(const std::string& prefix);

  std::size_t channels_ = 0;
  std::array<nn::Parameter, 4> matrices_;
  std::array<nn::Parameter, 4> biases_;
  std::array<nn::Parameter, 3> factors_;
  nn::Parameter quantiles_;
};

}  // namespace pmc::entropy
