#pragma once

#include <span>

#include "pmc/nn/autograd.hpp"

namespace pmc::nn {

// Mean over the batch of -log softmax(logits)[label]. logits: (N, K).
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels);

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double dynamic_range = 1.0;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Mean structural similarity over all pixels and channels of NCHW images.
// Local statistics use a separable Gaussian window with reflective borders.
template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b, const SsimOptions& opts = {});

// Per-image mean SSIM without a tape; convenient for reporting.
std::vector<double> ssim_per_image(const Tensor<float>& a, const Tensor<float>& b, const SsimOptions& opts = {});

}  // namespace pmc::nn
