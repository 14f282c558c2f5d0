#pragma once

#include <random>
#include <string>

#include "pmc/nn/ops.hpp"
#include "pmc/nn/optim.hpp"

namespace pmc::nn {

// Weight init: kRelu draws U(+-sqrt(6/fan_in)), kLinear draws U(+-1/sqrt(fan_in)).
enum class Init { kRelu, kLinear };

struct Conv2d {
  Parameter weight, bias;
  std::size_t stride = 1, padding = 0;

  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
         std::size_t padding, std::mt19937_64& rng, Init init = Init::kRelu);
  Var<float> operator()(const Var<float>& x) const { return conv2d(x, weight.var, bias.var, stride, padding); }
  void collect(ParameterRefs& out) { out.insert(out.end(), {&weight, &bias}); }
};

struct Deconv2d {
  Parameter weight, bias;
  std::size_t stride = 1, padding = 0, output_padding = 0;

  Deconv2d() = default;
  Deconv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
           std::size_t padding, std::size_t output_padding, std::mt19937_64& rng, Init init = Init::kRelu);
  Var<float> operator()(const Var<float>& x) const {
    return deconv2d(x, weight.var, bias.var, stride, padding, output_padding);
  }
  void collect(ParameterRefs& out) { out.insert(out.end(), {&weight, &bias}); }
};

struct Linear {
  Parameter weight, bias;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng, Init init = Init::kRelu);
  Var<float> operator()(const Var<float>& x) const { return linear(x, weight.var, bias.var); }
  void collect(ParameterRefs& out) { out.insert(out.end(), {&weight, &bias}); }
};

// GDN / IGDN with effective beta = 1 and gamma = 0.1 I at init.
struct Gdn {
  Parameter beta, gamma;
  bool inverse = false;

  Gdn() = default;
  Gdn(const std::string& name, std::size_t channels, bool inverse);
  Var<float> operator()(const Var<float>& x) const {
    return inverse ? igdn(x, beta.var, gamma.var) : gdn(x, beta.var, gamma.var);
  }
  void collect(ParameterRefs& out) { out.insert(out.end(), {&beta, &gamma}); }
};

}  // namespace pmc::nn
