#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "pmc/bytes.hpp"
#include "pmc/entropy/cdf.hpp"

namespace pmc::rangecoder {

using entropy::CdfTable;
using entropy::CdfTableSet;

struct Symbol {
  std::uint32_t channel = 0;
  std::int32_t value = 0;
  bool operator==(const Symbol&) const = default;
};

// Channel id of every position of a (C, H, W) latent in raster order:
// channel-major, then row-major.
std::vector<std::uint32_t> raster_channels(std::size_t channels, std::size_t height, std::size_t width);
std::vector<Symbol> raster_stream(std::span<const std::int32_t> values, std::size_t channels, std::size_t height,
                                  std::size_t width);

// Byte-oriented range encoder: 32-bit range, 16-bit frequencies, carries
// propagated through a cached byte and a run of pending 0xFF bytes. The
// leading byte of the classic scheme is always zero and is not emitted.
class Encoder {
 public:
  void encode(std::uint32_t cum, std::uint32_t freq);
  // Equiprobable raw bits, most significant first.
  void encode_bits(std::uint32_t value, int bits);
  void encode_symbol(const CdfTable& table, std::int32_t value);
  Bytes finish();

 private:
  void shift_low();

  std::uint64_t low_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
  std::uint8_t cache_ = 0;
  std::uint64_t pending_ = 1;
  bool first_ = true;
  Bytes out_;
};

class Decoder {
 public:
  explicit Decoder(std::span<const std::uint8_t> bytes);
  // Returns the index whose [cdf[i], cdf[i+1]) holds the next target.
  std::size_t decode_index(std::span<const std::uint32_t> cdf);
  std::uint32_t decode_bits(int bits);
  std::int32_t decode_symbol(const CdfTable& table);
  // Throws DecodeError unless every byte was consumed.
  void finish() const;

 private:
  void consume(std::uint32_t cum, std::uint32_t freq);
  std::uint8_t next_byte();

  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
  std::uint32_t code_ = 0;
  std::uint32_t range_ = 0xFFFFFFFFu;
};

// Symbols outside a table's range are sent as the escape symbol followed by
// the Elias-gamma coded distance from the range, as raw bits.
Bytes encode(std::span<const Symbol> symbols, const CdfTableSet& tables);
std::vector<std::int32_t> decode(std::span<const std::uint8_t> bytes, const CdfTableSet& tables,
                                 std::span<const std::uint32_t> channels);

// Ideal code length, in bits, of the stream under the tables (escape bits
// included).
double information_bits(std::span<const Symbol> symbols, const CdfTableSet& tables);

}  // namespace pmc::rangecoder
