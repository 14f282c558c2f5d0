#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmc/image.hpp"

namespace pmc::harness {

inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

struct Dataset {
  std::vector<Image8> images;
  std::vector<int> labels;
  std::string source;  // file path or "synthetic:<seed>"
  std::uint64_t seed = 0;

  std::size_t size() const { return images.size(); }
  Dataset slice(std::size_t begin, std::size_t end) const;
};

// Parses one CIFAR-10 binary file: 3073-byte records, label byte then the
// R, G and B planes. A directory loads data_batch_1..5.bin, or test_batch.bin
// when `test` is set.
Dataset load_cifar10_file(const std::string& path);
Dataset load_cifar10(const std::string& path, bool test = false);

// Class-conditional oriented gratings: each class has its own orientation and
// spatial frequency; phase, contrast, brightness, tint and noise vary per image.
Dataset make_synthetic(std::size_t n, int classes, std::uint64_t seed);

struct Halves {
  Dataset validation;
  Dataset evaluation;
};
// First half in file order is validation, the rest evaluation.
Halves split_halves(const Dataset& d);

}  // namespace pmc::harness
