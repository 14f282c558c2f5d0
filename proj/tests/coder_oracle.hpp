#pragma once

// Independent oracles for the range coder: draws from a table's own
// distribution and an exact-rational model of the coding interval.

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <random>
#include <vector>

#include "pmc/rangecoder/range_coder.hpp"

namespace pmc::testing {

using boost::multiprecision::cpp_rational;
using rangecoder::CdfTable;

inline CdfTable random_table(std::mt19937_64& rng, std::uint32_t max_count = 64) {
  std::uniform_int_distribution<std::uint32_t> count(1, max_count);
  std::uniform_int_distribution<std::int32_t> start(-40, 10);
  std::exponential_distribution<double> mass(1.0);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<double> pmf(count(rng));
  for (auto& p : pmf) p = coin(rng) < 0.1 ? 0.0 : mass(rng);
  pmf[0] += 1e-3;
  return entropy::make_table(start(rng), pmf, coin(rng) * 1e-3, coin(rng) * 1e-3);
}

// Draws from the table's own distribution, with occasional escapes.
inline std::int32_t draw(const CdfTable& t, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::uint32_t> u(0, entropy::kCdfTotal - 1);
  const std::uint32_t target = u(rng);
  std::size_t idx = 0;
  while (t.cdf[idx + 1] <= target) ++idx;
  std::uniform_int_distribution<std::int32_t> distance(1, 1 << 20);
  if (idx == 0) return t.min_symbol - distance(rng);
  if (idx == t.escape_high()) return t.max_symbol() + distance(rng);
  return t.min_symbol + static_cast<std::int32_t>(idx) - 1;
}

// Ideal arithmetic-coding interval width: the product of symbol probabilities.
inline cpp_rational ideal_width(const CdfTable& t, const std::vector<std::int32_t>& stream) {
  cpp_rational width = 1;
  for (auto v : stream) width *= cpp_rational(t.freq(static_cast<std::size_t>(v - t.min_symbol) + 1), entropy::kCdfTotal);
  return width;
}

// Exact-rational model of the coder on [0, 1): the interval is kept as
// rationals with no registers, carries or byte output. Only the coder's
// rounding rule is mirrored: at scale 2^(32+8s) the width is an integer R,
// the sub-interval step is floor(R / 2^16), and s grows while R < 2^24.
struct RationalModel {
  cpp_rational low = 0, width = 1;
  unsigned shifts = 0;

  cpp_rational scale() const { return cpp_rational(boost::multiprecision::cpp_int(1) << (32 + 8 * shifts)); }

  void encode(std::uint32_t cum, std::uint32_t freq) {
    // The first interval is [0, 1) at scale 2^32, held by the coder as 2^32 - 1.
    cpp_rational units = shifts == 0 && width == 1 ? cpp_rational(0xFFFFFFFFu) : width * scale();
    const auto step = boost::multiprecision::numerator(units) / boost::multiprecision::denominator(units) >> 16;
    low += cpp_rational(step * cum) / scale();
    width = cpp_rational(step * freq) / scale();
    while (width * scale() < (1 << 24)) ++shifts;
  }

  // The coder flushes every digit of low at the final scale.
  Bytes expected_bytes() const {
    Bytes out;
    cpp_rational rest = low;
    for (unsigned i = 0; i < shifts + 4; ++i) {
      rest *= 256;
      const auto digit = boost::multiprecision::numerator(rest) / boost::multiprecision::denominator(rest);
      out.push_back(static_cast<std::uint8_t>(digit));
      rest -= cpp_rational(digit);
    }
    return out;
  }
};

inline cpp_rational as_fraction(const Bytes& bytes) {
  cpp_rational v = 0, scale = 1;
  for (auto b : bytes) {
    scale /= 256;
    v += scale * b;
  }
  return v;
}

struct SweepResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
};

// Every stream of length 0..4 over eight three-symbol tables: bytes equal the
// rational model's digits, the code value lies in the model interval, the
// interval is no wider than ideal, the size bound holds and decoding is exact.
inline SweepResult short_stream_sweep() {
  std::mt19937_64 rng(1);
  std::vector<CdfTable> tables{
      entropy::make_table(0, std::vector<double>{1.0, 1.0, 1.0}, 0.0, 0.0),
      entropy::make_table(-1, std::vector<double>{0.98, 0.01, 0.01}, 0.0, 0.0),
      entropy::make_table(5, std::vector<double>{1e-9, 1.0, 1e-9}, 1e-9, 1e-9),
  };
  for (int i = 0; i < 5; ++i) {
    tables.push_back(entropy::make_table(static_cast<std::int32_t>(rng() % 7) - 3,
                                         std::vector<double>{std::exp(-(double)(rng() % 8)),
                                                             std::exp(-(double)(rng() % 8)),
                                                             std::exp(-(double)(rng() % 8))},
                                         1e-4, 1e-4));
  }
  SweepResult r;
  for (const auto& table : tables) {
    rangecoder::CdfTableSet set{table};
    for (int len = 0; len <= 4; ++len) {
      int combos = 1;
      for (int i = 0; i < len; ++i) combos *= 3;
      for (int code = 0; code < combos; ++code) {
        std::vector<std::int32_t> stream;
        std::vector<rangecoder::Symbol> symbols;
        for (int i = 0, rest = code; i < len; ++i, rest /= 3) {
          stream.push_back(table.min_symbol + rest % 3);
          symbols.push_back({0, stream.back()});
        }
        const auto bytes = rangecoder::encode(symbols, set);
        RationalModel model;
        for (auto v : stream) {
          const auto idx = static_cast<std::size_t>(v - table.min_symbol) + 1;
          model.encode(table.cdf[idx], table.freq(idx));
        }
        const cpp_rational value = as_fraction(bytes);
        const bool ok = bytes == model.expected_bytes() && value >= model.low && value < model.low + model.width &&
                        model.width <= ideal_width(table, stream) &&
                        static_cast<double>(bytes.size()) <= std::ceil(rangecoder::information_bits(symbols, set) / 8.0) + 8 &&
                        rangecoder::decode(bytes, set, std::vector<std::uint32_t>(stream.size(), 0)) == stream;
        r.failures += !ok;
        ++r.checked;
      }
    }
  }
  return r;
}

// Random multi-table streams with escapes: exact round trip and at most 64
// bits over the information content.
inline SweepResult random_round_trips(std::size_t cases, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> length(1, 2048), table_count(1, 8);
  SweepResult r;
  for (std::size_t trial = 0; trial < cases; ++trial) {
    rangecoder::CdfTableSet tables(table_count(rng));
    for (auto& t : tables) t = random_table(rng);
    std::vector<rangecoder::Symbol> symbols(length(rng));
    std::vector<std::uint32_t> channels(symbols.size());
    for (std::size_t i = 0; i < symbols.size(); ++i) {
      const auto c = static_cast<std::uint32_t>(rng() % tables.size());
      symbols[i] = {c, draw(tables[c], rng)};
      channels[i] = c;
    }
    const auto bytes = rangecoder::encode(symbols, tables);
    const auto decoded = rangecoder::decode(bytes, tables, channels);
    bool ok = decoded.size() == symbols.size();
    for (std::size_t i = 0; ok && i < symbols.size(); ++i) ok = decoded[i] == symbols[i].value;
    ok = ok && 8.0 * static_cast<double>(bytes.size()) <= rangecoder::information_bits(symbols, tables) + 64.0;
    r.failures += !ok;
    ++r.checked;
  }
  return r;
}

}  // namespace pmc::testing
