#include "pmc/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pmc/error.hpp"

namespace pmc {

std::vector<std::uint8_t> Image8::interleaved() const {
  std::vector<std::uint8_t> out(pixels.size());
  const std::size_t n = plane();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < kChannels; ++c) out[i * kChannels + c] = pixels[c * n + i];
  return out;
}

Image8 Image8::from_interleaved(std::span<const std::uint8_t> rgb, std::size_t height, std::size_t width) {
  if (rgb.size() != kChannels * height * width) throw DimensionError("interleaved buffer size mismatch");
  Image8 img(height, width);
  const std::size_t n = img.plane();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < kChannels; ++c) img.pixels[c * n + i] = rgb[i * kChannels + c];
  return img;
}

nn::Tensor<float> to_tensor(std::span<const Image8> images) {
  if (images.empty()) throw DimensionError("to_tensor: empty batch");
  const std::size_t h = images[0].height, w = images[0].width;
  nn::Tensor<float> t({images.size(), Image8::kChannels, h, w});
  std::size_t k = 0;
  for (const auto& img : images) {
    if (img.height != h || img.width != w) throw DimensionError("to_tensor: images differ in size");
    for (auto p : img.pixels) t.data[k++] = static_cast<float>(p) / 255.0f;
  }
  return t;
}

nn::Tensor<float> to_tensor(const Image8& image) { return to_tensor(std::span<const Image8>(&image, 1)); }

std::vector<Image8> from_tensor(const nn::Tensor<float>& t) {
  if (t.rank() != 4 || t.shape[1] != Image8::kChannels) {
    throw DimensionError("from_tensor: expected (N, 3, H, W), got " + nn::to_string(t.shape));
  }
  std::vector<Image8> out;
  out.reserve(t.shape[0]);
  std::size_t k = 0;
  for (std::size_t i = 0; i < t.shape[0]; ++i) {
    Image8 img(t.shape[2], t.shape[3]);
    for (auto& p : img.pixels) {
      const float v = std::clamp(t.data[k++], 0.0f, 1.0f);
      p = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    out.push_back(std::move(img));
  }
  return out;
}

double psnr(const Image8& a, const Image8& b) {
  if (a.pixels.size() != b.pixels.size()) throw DimensionError("psnr: image sizes differ");
  double se = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) {
    const double d = static_cast<double>(a.pixels[i]) - static_cast<double>(b.pixels[i]);
    se += d * d;
  }
  if (se == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(255.0 * 255.0 / (se / static_cast<double>(a.pixels.size())));
}

}  // namespace pmc
