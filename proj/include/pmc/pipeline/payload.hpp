#pragma once

#include <string>

#include "pmc/baseline/baseline_codec.hpp"
#include "pmc/codec/neural_codec.hpp"

namespace pmc::pipeline {

enum class CodecKind { kPng, kJpeg, kNeural };

std::string to_string(CodecKind k);
// "png" | "jpeg" | "neural"; ConfigError otherwise.
CodecKind parse_codec(const std::string& s);

// The edge-to-cloud leg. `neural` may be null unless kind is kNeural.
struct PayloadCodec {
  CodecKind kind = CodecKind::kPng;
  baseline::JpegConfig jpeg;
  const codec::FactorizedPrior* neural = nullptr;

  Bytes encode(const Image8& image) const;
  // DecodeError / FormatError on malformed payloads, CodecVersionError on a
  // neural hash mismatch.
  Image8 decode(std::span<const std::uint8_t> payload) const;
};

}  // namespace pmc::pipeline
