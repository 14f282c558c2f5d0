#include "pmc/nn/layers.hpp"

#include <cmath>

namespace pmc::nn {

namespace {

Tensor<float> init_weight(Shape shape, std::size_t fan_in, std::mt19937_64& rng, Init init) {
  if (init == Init::kRelu) return kaiming_uniform(std::move(shape), fan_in, rng);
  return uniform_tensor(std::move(shape), 1.0f / std::sqrt(static_cast<float>(fan_in)), rng);
}

Tensor<float> init_bias(std::size_t n, std::size_t fan_in, std::mt19937_64& rng) {
  return uniform_tensor({n}, 1.0f / std::sqrt(static_cast<float>(fan_in)), rng);
}

}  // namespace

Conv2d::Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
               std::size_t padding_, std::mt19937_64& rng, Init init)
    : weight(name + ".weight", init_weight({out, in, kernel, kernel}, in * kernel * kernel, rng, init)),
      bias(name + ".bias", init_bias(out, in * kernel * kernel, rng)),
      stride(stride_),
      padding(padding_) {}

Deconv2d::Deconv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
                   std::size_t padding_, std::size_t output_padding_, std::mt19937_64& rng, Init init)
    : weight(name + ".weight", init_weight({in, out, kernel, kernel}, out * kernel * kernel, rng, init)),
      bias(name + ".bias", init_bias(out, out * kernel * kernel, rng)),
      stride(stride_),
      padding(padding_),
      output_padding(output_padding_) {}

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng, Init init)
    : weight(name + ".weight", init_weight({out, in}, in, rng, init)), bias(name + ".bias", init_bias(out, in, rng)) {}

Gdn::Gdn(const std::string& name, std::size_t channels, bool inverse_)
    : beta(name + ".beta", Tensor<float>({channels}, static_cast<float>(std::sqrt(1.0 - kGdnBetaMin)))),
      gamma(name + ".gamma", Tensor<float>({channels, channels}, 1e-3f)),
      inverse(inverse_) {
  for (std::size_t i = 0; i < channels; ++i) gamma.value().data[i * channels + i] = std::sqrt(0.1f);
}

}  // namespace pmc::nn
