#pragma once

#include <span>
#include <vector>

#include "pmc/bytes.hpp"

namespace pmc::pipeline {

// u32 little-endian length followed by the body, repeated.
Bytes encode_frames(std::span<const Bytes> bodies);
// Throws FormatError on a truncated frame.
std::vector<Bytes> decode_frames(std::span<const std::uint8_t> data);

// Comma-separated request ids, as carried by the x-request-id header of the
// batch endpoints.
std::string join_ids(std::span<const std::string> ids);
std::vector<std::string> split_ids(const std::string& header);

}  // namespace pmc::pipeline
