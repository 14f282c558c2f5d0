#include "pmc/harness/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <random>

#include "pmc/bytes.hpp"

namespace pmc::harness {

Dataset Dataset::slice(std::size_t begin, std::size_t end) const {
  end = std::min(end, size());
  begin = std::min(begin, end);
  Dataset d;
  d.images.assign(images.begin() + static_cast<std::ptrdiff_t>(begin), images.begin() + static_cast<std::ptrdiff_t>(end));
  d.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin), labels.begin() + static_cast<std::ptrdiff_t>(end));
  d.source = source;
  d.seed = seed;
  return d;
}

Dataset load_cifar10_file(const std::string& path) {
  const Bytes raw = read_file(path);
  if (raw.size() % kCifarRecordBytes != 0) {
    throw FormatError("'" + path + "' is " + std::to_string(raw.size()) + " bytes, not a multiple of " +
                      std::to_string(kCifarRecordBytes));
  }
  Dataset d;
  d.source = path;
  const std::size_t n = raw.size() / kCifarRecordBytes;
  d.images.reserve(n);
  d.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint8_t* rec = raw.data() + i * kCifarRecordBytes;
    if (rec[0] > 9) throw FormatError("record " + std::to_string(i) + " has label " + std::to_string(rec[0]));
    d.labels.push_back(rec[0]);
    Image8 img;
    std::copy(rec + 1, rec + kCifarRecordBytes, img.pixels.begin());
    d.images.push_back(std::move(img));
  }
  return d;
}

Dataset load_cifar10(const std::string& path, bool test) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(path)) return load_cifar10_file(path);
  std::vector<std::string> files;
  if (test) {
    files.push_back((fs::path(path) / "test_batch.bin").string());
  } else {
    for (int i = 1; i <= 5; ++i) files.push_back((fs::path(path) / ("data_batch_" + std::to_string(i) + ".bin")).string());
  }
  Dataset all;
  all.source = path;
  for (const auto& f : files) {
    auto d = load_cifar10_file(f);
    all.images.insert(all.images.end(), d.images.begin(), d.images.end());
    all.labels.insert(all.labels.end(), d.labels.begin(), d.labels.end());
  }
  return all;
}

Dataset make_synthetic(std::size_t n, int classes, std::uint64_t seed) {
  if (n == 0 || classes < 1) throw ConfigError("make_synthetic: need n > 0 and at least one class");
  Dataset d;
  d.source = "synthetic:" + std::to_string(seed);
  d.seed = seed;
  std::mt19937_64 rng(seed);
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) d.labels[i] = static_cast<int>(i % static_cast<std::size_t>(classes));
  std::shuffle(d.labels.begin(), d.labels.end(), rng);

  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.06);
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  d.images.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = d.labels[i];
    const double angle = std::numbers::pi * c / classes + (u01(rng) - 0.5) * 0.24;
    const double freq = (c % 2 == 0 ? 2.5 : 3.5) + (u01(rng) - 0.5) * 0.8;  // cycles per 32 px
    const double phase = u01(rng) * kTwoPi;
    const double contrast = 0.25 + 0.2 * u01(rng);
    const double brightness = 0.35 + 0.3 * u01(rng);
    double tint[3];
    for (double& t : tint) t = 0.7 + 0.3 * u01(rng);
    const double ca = std::cos(angle), sa = std::sin(angle);
    Image8 img;
    for (std::size_t y = 0; y < 32; ++y) {
      for (std::size_t x = 0; x < 32; ++x) {
        const double wave = std::sin(kTwoPi * freq * (ca * static_cast<double>(x) + sa * static_cast<double>(y)) / 32.0 + phase);
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double v = brightness * tint[ch] + contrast * tint[ch] * wave + noise(rng);
          img.at(ch, y, x) = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
        }
      }
    }
    d.images.push_back(std::move(img));
  }
  return d;
}

Halves split_halves(const Dataset& d) {
  const std::size_t half = d.size() / 2;
  return {d.slice(0, half), d.slice(half, d.size())};
}

}  // namespace pmc::harness
