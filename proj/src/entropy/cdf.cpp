#include "pmc/entropy/cdf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pmc/error.hpp"

namespace pmc::entropy {

void CdfTable::validate() const {
  if (count == 0) throw FormatError("cdf table has no in-range symbols");
  if (cdf.size() != count + 3) {
    throw FormatError("cdf table has " + std::to_string(cdf.size()) + " entries, expected " +
                      std::to_string(count + 3));
  }
  if (cdf.front() != 0 || cdf.back() != kCdfTotal) throw FormatError("cdf table must span [0, 65536]");
  for (std::size_t i = 0; i + 1 < cdf.size(); ++i) {
    if (cdf[i + 1] <= cdf[i]) throw FormatError("cdf table not strictly increasing at index " + std::to_string(i));
  }
}

std::vector<std::uint32_t> quantize_pmf(std::span<const double> pmf) {
  const std::size_t n = pmf.size();
  if (n == 0 || n > kCdfTotal) throw ConfigError("quantize_pmf: alphabet size " + std::to_string(n) + " unsupported");
  double total = 0.0;
  for (double p : pmf) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw NumericError("quantize_pmf: invalid mass");
    total += p;
  }
  if (!(total > 0.0)) throw NumericError("quantize_pmf: zero total mass");

  const double budget = static_cast<double>(kCdfTotal - n);
  std::vector<std::uint32_t> freq(n);
  std::vector<double> frac(n);
  std::uint64_t used = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double share = pmf[i] / total * budget;
    const double whole = std::floor(share);
    freq[i] = 1 + static_cast<std::uint32_t>(whole);
    frac[i] = share - whole;
    used += freq[i];
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; used < kCdfTotal; k = (k + 1) % n, ++used) ++freq[order[k]];

  std::vector<std::uint32_t> cdf(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i) cdf[i + 1] = cdf[i] + freq[i];
  return cdf;
}

CdfTable make_table(std::int32_t min_symbol, std::span<const double> pmf, double tail_low, double tail_high) {
  std::vector<double> masses;
  masses.reserve(pmf.size() + 2);
  masses.push_back(tail_low);
  masses.insert(masses.end(), pmf.begin(), pmf.end());
  masses.push_back(tail_high);
  CdfTable t;
  t.min_symbol = min_symbol;
  t.count = static_cast<std::uint32_t>(pmf.size());
  t.cdf = quantize_pmf(masses);
  return t;
}

}  // namespace pmc::entropy
