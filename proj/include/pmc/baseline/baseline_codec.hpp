#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pmc/bytes.hpp"
#include "pmc/image.hpp"

namespace pmc::baseline {

Bytes png_encode(const Image8& image);
// Throws DecodeError on a corrupt or non-RGB stream.
Image8 png_decode(std::span<const std::uint8_t> bytes);

enum class Subsampling { k420, k444 };

std::string to_string(Subsampling s);
// "420" / "444" (and "4:2:0" / "4:4:4"); ConfigError otherwise.
Subsampling parse_subsampling(const std::string& s);

struct JpegConfig {
  int quality = 89;
  Subsampling subsampling = Subsampling::k444;
  bool optimize = true;  // optimized Huffman tables

  void validate() const;
  bool operator==(const JpegConfig&) const = default;
};

Bytes jpeg_encode(const Image8& image, const JpegConfig& cfg);
Image8 jpeg_decode(std::span<const std::uint8_t> bytes);

struct QualityEval {
  double accuracy = 0;
  double mean_size = 0;
};

// Quality 95, 92, ..., 50.
std::vector<int> quality_grid();

// Scans the grid at the given subsampling and returns the smallest mean size
// whose accuracy meets the floor (ties go to the higher quality). Throws
// NotFoundError if no grid point qualifies.
JpegConfig quality_search(Subsampling subsampling, const std::function<QualityEval(const JpegConfig&)>& eval,
                          double accuracy_floor, bool optimize = true);

}  // namespace pmc::baseline
