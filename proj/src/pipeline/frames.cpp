#include "pmc/pipeline/frames.hpp"

#include <limits>

namespace pmc::pipeline {

Bytes encode_frames(std::span<const Bytes> bodies) {
  ByteWriter w;
  for (const auto& b : bodies) {
    if (b.size() > std::numeric_limits<std::uint32_t>::max()) throw FormatError("frame too large");
    w.u32(static_cast<std::uint32_t>(b.size()));
    w.raw(b);
  }
  return w.take();
}

std::vector<Bytes> decode_frames(std::span<const std::uint8_t> data) {
  ByteReader r(data);
  std::vector<Bytes> out;
  while (r.remaining() > 0) {
    const auto n = r.u32();
    auto body = r.raw(n);
    out.emplace_back(body.begin(), body.end());
  }
  return out;
}

std::string join_ids(std::span<const std::string> ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].find(',') != std::string::npos) throw FormatError("request id may not contain a comma: " + ids[i]);
    if (i) out += ',';
    out += ids[i];
  }
  return out;
}

std::vector<std::string> split_ids(const std::string& header) {
  std::vector<std::string> out;
  if (header.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto comma = header.find(',', start);
    out.push_back(header.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace pmc::pipeline
