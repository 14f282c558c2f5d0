#include "pmc/pipeline/payload.hpp"

namespace pmc::pipeline {

std::string to_string(CodecKind k) {
  switch (k) {
    case CodecKind::kPng:
      return "png";
    case CodecKind::kJpeg:
      return "jpeg";
    case CodecKind::kNeural:
      return "neural";
  }
  return "unknown";
}

CodecKind parse_codec(const std::string& s) {
  if (s == "png") return CodecKind::kPng;
  if (s == "jpeg") return CodecKind::kJpeg;
  if (s == "neural") return CodecKind::kNeural;
  throw ConfigError("unknown codec '" + s + "' (expected png, jpeg or neural)");
}

namespace {
const codec::FactorizedPrior& require_neural(const codec::FactorizedPrior* m) {
  if (!m) throw ConfigError("neural codec selected but no codec model is loaded");
  return *m;
}
}  // namespace

Bytes PayloadCodec::encode(const Image8& image) const {
  switch (kind) {
    case CodecKind::kPng:
      return baseline::png_encode(image);
    case CodecKind::kJpeg:
      return baseline::jpeg_encode(image, jpeg);
    case CodecKind::kNeural:
      return codec::compress(require_neural(neural), image).serialize();
  }
  throw ConfigError("unknown codec");
}

Image8 PayloadCodec::decode(std::span<const std::uint8_t> payload) const {
  switch (kind) {
    case CodecKind::kPng:
      return baseline::png_decode(payload);
    case CodecKind::kJpeg:
      return baseline::jpeg_decode(payload);
    case CodecKind::kNeural:
      return codec::decompress(require_neural(neural), codec::Bitstring::parse(payload));
  }
  throw ConfigError("unknown codec");
}

}  // namespace pmc::pipeline
