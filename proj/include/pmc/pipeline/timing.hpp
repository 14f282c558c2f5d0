#pragma once

#include <array>
#include <chrono>
#include <map>
#include <string>

namespace pmc::pipeline {

// Stage names of the end-to-end latency breakdown, in pipeline order.
inline constexpr const char* kClientJpegEncode = "client-jpeg-encode";
inline constexpr const char* kNetClientEdge = "net-client-edge";
inline constexpr const char* kEdgeDecode = "edge-decode";
inline constexpr const char* kPerturbationGenerate = "perturbation-generate";
inline constexpr const char* kEdgeEncode = "edge-encode";
inline constexpr const char* kEdgeOther = "edge-other";
inline constexpr const char* kNetEdgeCloud = "net-edge-cloud";
inline constexpr const char* kCloudDecode = "cloud-decode";
inline constexpr const char* kCloudInference = "cloud-inference";
inline constexpr const char* kCloudOther = "cloud-other";

inline constexpr std::array<const char*, 10> kStages{
    kClientJpegEncode, kNetClientEdge, kEdgeDecode,  kPerturbationGenerate, kEdgeEncode,
    kEdgeOther,        kNetEdgeCloud,  kCloudDecode, kCloudInference,       kCloudOther};

// Stages of the on-client generation configuration, which posts straight to
// the cloud and has no edge.
inline constexpr const char* kClientPerturbationGenerate = "client-perturbation-generate";
inline constexpr const char* kClientEncode = "client-encode";
inline constexpr const char* kNetClientCloud = "net-client-cloud";

// Microseconds per stage.
using Timings = std::map<std::string, double>;

double stage_sum(const Timings& t);

// Monotonic stopwatch in microseconds.
class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double elapsed_us() const {
    return std::chrono::duration<double, std::micro>(std::chrono::steady_clock::now() - start_).count();
  }
  // Elapsed time since the previous lap (or construction).
  double lap_us() {
    const auto now = std::chrono::steady_clock::now();
    const double us = std::chrono::duration<double, std::micro>(now - last_).count();
    last_ = now;
    return us;
  }

 private:
  std::chrono::steady_clock::time_point start_;
  std::chrono::steady_clock::time_point last_ = start_;
};

}  // namespace pmc::pipeline
