#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pmc/nn/tensor.hpp"

namespace pmc {

// 8-bit RGB image stored planar (R plane, G plane, B plane), row-major,
// the same layout as a CIFAR-10 record.
struct Image8 {
  static constexpr std::size_t kChannels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::vector<std::uint8_t> pixels;

  Image8() : pixels(kChannels * 32 * 32, 0) {}
  Image8(std::size_t h, std::size_t w) : height(h), width(w), pixels(kChannels * h * w, 0) {}

  std::size_t plane() const { return height * width; }
  std::uint8_t& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[c * plane() + y * width + x]; }
  std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[c * plane() + y * width + x]; }

  // Interleaved RGBRGB... as used by the PNG/JPEG libraries.
  std::vector<std::uint8_t> interleaved() const;
  static Image8 from_interleaved(std::span<const std::uint8_t> rgb, std::size_t height, std::size_t width);

  bool operator==(const Image8&) const = default;
};

// Stacks images into an (N, 3, H, W) tensor scaled to [0, 1].
nn::Tensor<float> to_tensor(std::span<const Image8> images);
nn::Tensor<float> to_tensor(const Image8& image);
// Splits an (N, 3, H, W) tensor back into images; values are clamped to
// [0, 1] and rounded to the nearest level.
std::vector<Image8> from_tensor(const nn::Tensor<float>& t);

double psnr(const Image8& a, const Image8& b);

}  // namespace pmc
