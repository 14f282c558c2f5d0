#pragma once

// Central finite-difference oracle. Independent of the backward closures: it
// only evaluates forward passes.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "pmc/nn/autograd.hpp"
#include "pmc/nn/ops.hpp"

namespace pmc::testing {

using nn::Tensor;
using nn::Var;

struct GradCheckResult {
  double max_rel_error = 0.0;  // worst input, ||analytic - numeric|| / max(norms)
  std::size_t checked = 0;
};

inline Tensor<double> random_tensor(nn::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& v : t.data) v = d(rng);
  return t;
}

// `fn` maps the input leaves to a scalar. Every input is checked.
inline GradCheckResult grad_check(const std::vector<Tensor<double>>& inputs,
                                  const std::function<Var<double>(const std::vector<Var<double>>&)>& fn,
                                  double h = 1e-4) {
  std::vector<Var<double>> leaves;
  for (const auto& t : inputs) leaves.push_back(nn::leaf(t, true));
  auto out = fn(leaves);
  nn::backward(out);

  GradCheckResult result;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> analytic = leaves[k].grad();
    if (analytic.empty()) analytic.assign(inputs[k].size(), 0.0);
    std::vector<double> numeric(inputs[k].size());
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto eval = [&](double delta) {
        nn::NoGradGuard guard;
        std::vector<Var<double>> probe;
        for (std::size_t j = 0; j < inputs.size(); ++j) {
          Tensor<double> t = inputs[j];
          if (j == k) t.data[i] += delta;
          probe.push_back(nn::constant(std::move(t)));
        }
        return fn(probe).item();
      };
      numeric[i] = (eval(h) - eval(-h)) / (2.0 * h);
    }
    double diff = 0.0, na = 0.0, nn_ = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
      na += analytic[i] * analytic[i];
      nn_ += numeric[i] * numeric[i];
    }
    const double denom = std::max({std::sqrt(na), std::sqrt(nn_), 1e-12});
    result.max_rel_error = std::max(result.max_rel_error, std::sqrt(diff) / denom);
    ++result.checked;
  }
  return result;
}

// Reduces a tensor-valued op to a scalar by a fixed random projection.
inline Var<double> project(const Var<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  return nn::sum(nn::mul(y, nn::constant(random_tensor(y.shape(), rng))));
}

}  // namespace pmc::testing
