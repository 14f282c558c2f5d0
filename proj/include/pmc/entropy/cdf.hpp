#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace pmc::entropy {

inline constexpr int kCdfPrecision = 16;
inline constexpr std::uint32_t kCdfTotal = 1u << kCdfPrecision;

// Static coding distribution for one latent channel. Symbol indices are
//   0             escape below min_symbol
//   1 .. count    min_symbol .. min_symbol + count - 1
//   count + 1     escape above the range
// cdf has count + 3 entries, starts at 0, ends at kCdfTotal and is strictly
// increasing, so every index has frequency >= 1.
struct CdfTable {
  std::int32_t min_symbol = 0;
  std::uint32_t count = 0;
  std::vector<std::uint32_t> cdf;

  std::size_t alphabet() const { return count + 2; }
  std::int32_t max_symbol() const { return min_symbol + static_cast<std::int32_t>(count) - 1; }
  std::uint32_t freq(std::size_t index) const { return cdf[index + 1] - cdf[index]; }
  std::size_t escape_high() const { return count + 1; }

  // Throws FormatError on a malformed table.
  void validate() const;

  bool operator==(const CdfTable&) const = default;
};

using CdfTableSet = std::vector<CdfTable>;

// Converts non-negative masses to a cumulative table over kCdfTotal with every
// entry >= 1. Deterministic: remainders go to the largest fractional parts,
// ties to the lowest index.
std::vector<std::uint32_t> quantize_pmf(std::span<const double> pmf);

// pmf covers min_symbol .. min_symbol + pmf.size() - 1; the tails are the
// escape masses.
CdfTable make_table(std::int32_t min_symbol, std::span<const double> pmf, double tail_low, double tail_high);

}  // namespace pmc::entropy
