#include <climits>
#include <cmath>
#include <random>

#include "coder_oracle.hpp"
#include "doctest.h"
#include "pmc/rangecoder/range_coder.hpp"

using namespace pmc;
using namespace pmc::rangecoder;
using entropy::make_table;
using namespace pmc::testing;


TEST_CASE("empty stream flushes at most 8 bytes") {
  CdfTableSet tables{make_table(0, std::vector<double>{1.0, 1.0}, 0.0, 0.0)};
  auto bytes = encode({}, tables);
  CHECK(bytes.size() <= 8);
  CHECK(decode(bytes, tables, {}).empty());
}

TEST_CASE("eight uniform bytes fit in 16 bytes") {
  CdfTableSet tables{make_table(0, std::vector<double>(256, 1.0), 0.0, 0.0)};
  std::vector<Symbol> s;
  for (int v : {0, 255, 17, 128, 3, 99, 200, 64}) s.push_back({0, v});
  auto bytes = encode(s, tables);
  CHECK(bytes.size() <= 16);
  CHECK(bytes.size() <= std::ceil(information_bits(s, tables) / 8.0) + 8);
  CHECK(decode(bytes, tables, std::vector<std::uint32_t>(8, 0)) ==
        std::vector<std::int32_t>{0, 255, 17, 128, 3, 99, 200, 64});
}

TEST_CASE("exact-rational oracle on every short stream over three symbols") {
  const auto r = short_stream_sweep();
  CHECK(r.failures == 0);
  CHECK(r.checked == 8 * (1 + 3 + 9 + 27 + 81));
}

TEST_CASE("random tables and streams round-trip within the size bound") {
  const auto r = random_round_trips(1000, 2026);
  CHECK(r.checked == 1000);
  CHECK(r.failures == 0);
}

TEST_CASE("extreme escaped values round-trip") {
  CdfTableSet tables{make_table(3, std::vector<double>{1.0, 2.0}, 0.1, 0.1)};
  std::vector<std::int32_t> values{INT32_MIN, INT32_MAX, 0, 2, 5, 3, 4, -1000000, 1000000};
  std::vector<Symbol> s;
  for (auto v : values) s.push_back({0, v});
  auto bytes = encode(s, tables);
  CHECK(decode(bytes, tables, std::vector<std::uint32_t>(values.size(), 0)) == values);
}

TEST_CASE("a single-symbol alphabet costs at most 8 bytes at any length") {
  CdfTableSet tables{make_table(7, std::vector<double>{1.0}, 0.0, 0.0)};
  for (std::size_t n : {1u, 10u, 100u, 2048u, 10000u}) {
    std::vector<Symbol> s(n, Symbol{0, 7});
    auto bytes = encode(s, tables);
    CHECK(bytes.size() <= 8);
    CHECK(decode(bytes, tables, std::vector<std::uint32_t>(n, 0)) == std::vector<std::int32_t>(n, 7));
  }
}

TEST_CASE("corrupted payloads never decode silently to the original") {
  std::mt19937_64 rng(77);
  CdfTableSet tables{make_table(-8, std::vector<double>(17, 1.0), 1e-3, 1e-3)};
  std::vector<Symbol> s(400);
  for (auto& sym : s) sym = {0, draw(tables[0], rng)};
  std::vector<std::int32_t> original;
  for (auto& sym : s) original.push_back(sym.value);
  const auto bytes = encode(s, tables);
  const std::vector<std::uint32_t> channels(s.size(), 0);

  // Flips ahead of the flush bytes move the code value out of the stream's interval.
  for (std::size_t pos = 0; pos + 5 < bytes.size(); pos += 7) {
    for (int bit = 0; bit < 8; bit += 3) {
      auto bad = bytes;
      bad[pos] ^= static_cast<std::uint8_t>(1u << bit);
      bool differs = false;
      try {
        differs = decode(bad, tables, channels) != original;
      } catch (const DecodeError&) {
        differs = true;
      }
      CHECK(differs);
    }
  }

  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode(truncated, tables, channels), DecodeError);
  auto extended = bytes;
  extended.push_back(0);
  CHECK_THROWS_AS(decode(extended, tables, channels), DecodeError);
  CHECK_THROWS_AS(decode(Bytes{1, 2}, tables, channels), DecodeError);
}

TEST_CASE("raster order is channel-major then row-major") {
  auto ch = raster_channels(2, 2, 3);
  CHECK(ch == std::vector<std::uint32_t>{0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1});
  std::vector<std::int32_t> values{1, 2, 3, 4};
  auto s = raster_stream(values, 2, 1, 2);
  CHECK(s[2] == Symbol{1, 3});
  CHECK_THROWS_AS(raster_stream(values, 3, 1, 2), DimensionError);
}

TEST_CASE("encoding is deterministic") {
  std::mt19937_64 rng(5);
  CdfTableSet tables{random_table(rng), random_table(rng)};
  std::vector<Symbol> s(300);
  for (std::size_t i = 0; i < s.size(); ++i) s[i] = {static_cast<std::uint32_t>(i % 2), draw(tables[i % 2], rng)};
  CHECK(encode(s, tables) == encode(s, tables));
}
