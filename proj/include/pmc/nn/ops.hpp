#pragma once

#include <cstddef>
#include <span>

#include "pmc/nn/autograd.hpp"

namespace pmc::nn {

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding);
std::size_t deconv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                               std::size_t output_padding = 0);

// Elementwise, identical shapes.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);

template <typename T> Var<T> relu(const Var<T>& x);
template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> log(const Var<T>& x);

// Forward clamps to [lo, hi]; backward passes the gradient through unchanged.
template <typename T> Var<T> clamp_straight_through(const Var<T>& x, T lo, T hi);

template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);

// Concatenates two NCHW tensors along the channel axis.
template <typename T> Var<T> concat_channels(const Var<T>& a, const Var<T>& b);

// 2x2 max pooling, stride 2. Ties resolve to the first element in raster order.
template <typename T> Var<T> maxpool2d(const Var<T>& x);

// x: (N, in), weight: (out, in), bias: (out).
template <typename T> Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

// x: (N, C, H, W), weight: (OC, C, k, k), bias: (OC).
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t padding);

// Transposed convolution. x: (N, C, H, W), weight: (C, OC, k, k), bias: (OC).
// output_padding extends the bottom/right edge so stride-s stages can
// exactly invert a stride-s conv2d in shape.
template <typename T>
Var<T> deconv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t padding,
                std::size_t output_padding = 0);

// Generalized divisive normalization with exponent 1/2. beta_raw: (C),
// gamma_raw: (C, C); effective beta = r^2 + kGdnBetaMin, gamma = r^2.
inline constexpr double kGdnBetaMin = 1e-6;
template <typename T> Var<T> gdn(const Var<T>& x, const Var<T>& beta_raw, const Var<T>& gamma_raw);
template <typename T> Var<T> igdn(const Var<T>& x, const Var<T>& beta_raw, const Var<T>& gamma_raw);

}  // namespace pmc::nn
