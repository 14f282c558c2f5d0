#include "pmc/rangecoder/range_coder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

namespace pmc::rangecoder {

using entropy::kCdfPrecision;
using entropy::kCdfTotal;

namespace {

constexpr std::uint32_t kTop = 1u << 24;

const CdfTable& table_for(const CdfTableSet& tables, std::uint32_t channel) {
  if (channel >= tables.size()) {
    throw IndexError("symbol channel " + std::to_string(channel) + " has no table (" + std::to_string(tables.size()) +
                     " tables)");
  }
  return tables[channel];
}

int bit_width_of(std::uint32_t v) { return static_cast<int>(std::bit_width(v)); }

}  // namespace

std::vector<std::uint32_t> raster_channels(std::size_t channels, std::size_t height, std::size_t width) {
  std::vector<std::uint32_t> out;
  out.reserve(channels * height * width);
  for (std::size_t c = 0; c < channels; ++c) out.insert(out.end(), height * width, static_cast<std::uint32_t>(c));
  return out;
}

std::vector<Symbol> raster_stream(std::span<const std::int32_t> values, std::size_t channels, std::size_t height,
                                  std::size_t width) {
  if (values.size() != channels * height * width) throw DimensionError("raster_stream: value count mismatch");
  auto ch = raster_channels(channels, height, width);
  std::vector<Symbol> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = {ch[i], values[i]};
  return out;
}

void Encoder::shift_low() {
  if (low_ < 0xFF000000u || low_ >= (1ull << 32)) {
    const auto carry = static_cast<std::uint8_t>(low_ >> 32);
    std::uint8_t byte = cache_;
    do {
      if (!first_) out_.push_back(static_cast<std::uint8_t>(byte + carry));
      first_ = false;
      byte = 0xFF;
    } while (--pending_ != 0);
    cache_ = static_cast<std::uint8_t>(low_ >> 24);
  }
  ++pending_;
  low_ = (low_ & 0x00FFFFFFu) << 8;
}

void Encoder::encode(std::uint32_t cum, std::uint32_t freq) {
  const std::uint32_t r = range_ >> kCdfPrecision;
  low_ += static_cast<std::uint64_t>(r) * cum;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    shift_low();
  }
}

void Encoder::encode_bits(std::uint32_t value, int bits) {
  for (int b = bits - 1; b >= 0; --b) {
    const std::uint32_t bit = (value >> b) & 1u;
    encode(bit ? kCdfTotal / 2 : 0, kCdfTotal / 2);
  }
}

void Encoder::encode_symbol(const CdfTable& table, std::int32_t value) {
  if (value < table.min_symbol) {
    encode(table.cdf[0], table.freq(0));
    const auto distance = static_cast<std::uint32_t>(static_cast<std::int64_t>(table.min_symbol) - value);
    const int n = bit_width_of(distance) - 1;
    encode_bits(1, n + 1);  // n zeros then a one
    encode_bits(distance, n);
  } else if (value > table.max_symbol()) {
    const std::size_t esc = table.escape_high();
    encode(table.cdf[esc], table.freq(esc));
    const auto distance = static_cast<std::uint32_t>(static_cast<std::int64_t>(value) - table.max_symbol());
    const int n = bit_width_of(distance) - 1;
    encode_bits(1, n + 1);
    encode_bits(distance, n);
  } else {
    const auto idx = static_cast<std::size_t>(value - table.min_symbol) + 1;
    encode(table.cdf[idx], table.freq(idx));
  }
}

Bytes Encoder::finish() {
  for (int i = 0; i < 5; ++i) shift_low();
  return std::move(out_);
}

Decoder::Decoder(std::span<const std::uint8_t> bytes) : in_(bytes) {
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

std::uint8_t Decoder::next_byte() {
  if (pos_ >= in_.size()) throw DecodeError("range decoder ran past the end of the payload");
  return in_[pos_++];
}

void Decoder::consume(std::uint32_t cum, std::uint32_t freq) {
  const std::uint32_t r = range_ >> kCdfPrecision;
  code_ -= r * cum;
  range_ = r * freq;
  while (range_ < kTop) {
    range_ <<= 8;
    code_ = (code_ << 8) | next_byte();
  }
}

std::size_t Decoder::decode_index(std::span<const std::uint32_t> cdf) {
  const std::uint32_t r = range_ >> kCdfPrecision;
  const std::uint32_t target = code_ / r;
  if (target >= kCdfTotal) throw DecodeError("corrupt range-coded payload");
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), target);
  const auto idx = static_cast<std::size_t>(it - cdf.begin()) - 1;
  consume(cdf[idx], cdf[idx + 1] - cdf[idx]);
  return idx;
}

std::uint32_t Decoder::decode_bits(int bits) {
  static constexpr std::uint32_t kHalf[3] = {0, kCdfTotal / 2, kCdfTotal};
  std::uint32_t v = 0;
  for (int b = 0; b < bits; ++b) v = (v << 1) | static_cast<std::uint32_t>(decode_index(kHalf));
  return v;
}

std::int32_t Decoder::decode_symbol(const CdfTable& table) {
  const std::size_t idx = decode_index(table.cdf);
  if (idx != 0 && idx != table.escape_high()) return table.min_symbol + static_cast<std::int32_t>(idx) - 1;
  int n = 0;
  while (decode_bits(1) == 0) {
    if (++n > 31) throw DecodeError("escape length exceeds 32 bits");
  }
  const std::uint32_t distance = (1u << n) | decode_bits(n);
  const std::int64_t v = idx == 0 ? static_cast<std::int64_t>(table.min_symbol) - distance
                                  : static_cast<std::int64_t>(table.max_symbol()) + distance;
  if (v < INT32_MIN || v > INT32_MAX) throw DecodeError("escaped value out of range");
  return static_cast<std::int32_t>(v);
}

void Decoder::finish() const {
  if (pos_ != in_.size()) {
    throw DecodeError("range-coded payload has " + std::to_string(in_.size() - pos_) + " unread bytes");
  }
}

Bytes encode(std::span<const Symbol> symbols, const CdfTableSet& tables) {
  Encoder enc;
  for (const auto& s : symbols) enc.encode_symbol(table_for(tables, s.channel), s.value);
  return enc.finish();
}

std::vector<std::int32_t> decode(std::span<const std::uint8_t> bytes, const CdfTableSet& tables,
                                 std::span<const std::uint32_t> channels) {
  Decoder dec(bytes);
  std::vector<std::int32_t> out;
  out.reserve(channels.size());
  for (auto c : channels) out.push_back(dec.decode_symbol(table_for(tables, c)));
  dec.finish();
  return out;
}

double information_bits(std::span<const Symbol> symbols, const CdfTableSet& tables) {
  double bits = 0.0;
  for (const auto& s : symbols) {
    const auto& t = table_for(tables, s.channel);
    std::size_t idx;
    if (s.value < t.min_symbol || s.value > t.max_symbol()) {
      idx = s.value < t.min_symbol ? 0 : t.escape_high();
      const std::int64_t distance = s.value < t.min_symbol ? std::int64_t{t.min_symbol} - s.value
                                                           : std::int64_t{s.value} - t.max_symbol();
      bits += 2.0 * (bit_width_of(static_cast<std::uint32_t>(distance)) - 1) + 1.0;
    } else {
      idx = static_cast<std::size_t>(s.value - t.min_symbol) + 1;
    }
    bits -= std::log2(static_cast<double>(t.freq(idx)) / kCdfTotal);
  }
  return bits;
}

}  // namespace pmc::rangecoder
