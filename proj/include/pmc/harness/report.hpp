#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "pmc/pipeline/timing.hpp"

namespace pmc::harness {

struct MeanStd {
  double mean = 0, std = 0;  // population std
};
MeanStd mean_std(std::span<const double> values);

inline constexpr std::size_t kRawImageBytes = 32 * 32 * 3;

// Stage columns of a report row, in pipeline order; the last three only
// appear in the on-client generation configuration.
inline constexpr std::array<const char*, 13> kReportStages{
    pipeline::kClientJpegEncode,  pipeline::kNetClientEdge, pipeline::kEdgeDecode,
    pipeline::kPerturbationGenerate, pipeline::kEdgeEncode, pipeline::kEdgeOther,
    pipeline::kNetEdgeCloud,      pipeline::kCloudDecode,   pipeline::kCloudInference,
    pipeline::kCloudOther,        pipeline::kClientPerturbationGenerate, pipeline::kClientEncode,
    pipeline::kNetClientCloud};

// One evaluated image of one configuration.
struct ImageRecord {
  std::string config;
  std::string request_id;
  std::size_t index = 0;
  int truth = -1;
  int label = -1;
  bool ok = false;
  std::string error;
  std::size_t s1_bytes = 0;
  std::size_t s2_bytes = 0;
  pipeline::Timings timings;
  double end_to_end_us = 0;
};

// One configuration: target model x codec x deployment.
struct ReportRow {
  std::string config;      // "<model>/<codec>/<deployment>"
  std::string model;
  std::string codec;       // png | jpeg | neural
  std::string deployment;  // edge | on-client
  int client_quality = 0;  // 0: no client JPEG leg
  std::string client_subsampling;
  int edge_quality = 0;  // 0: the edge leg is not JPEG
  std::string edge_subsampling;
  std::size_t images = 0;
  std::size_t errors = 0;
  double accuracy = 0;
  MeanStd s1, s2;
  std::map<std::string, double> stage_mean_us;
  double client_compute_us = 0;
  double end_to_end_us = 0;
  double timing_residual = 0;  // (e2e - stage sum) / e2e over the config means
  double ssim_original_decoded = 0;
  std::string attested_hash;   // neural rows in service mode
  std::string bitstring_hash;  // hash carried by the neural payloads
  std::uint64_t seed = 0;
  std::string timestamp;
};

struct SubsamplingStudy {
  std::string model;
  int quality = 0;
  MeanStd size_444, size_420;
  double psnr_444 = 0, psnr_420 = 0;
  double accuracy_444 = 0, accuracy_420 = 0;
};

// Regular vs perturbed images under PNG and searched-quality JPEG.
struct CompressionStudy {
  std::string model;
  double png_regular = 0, png_perturbed = 0;
  int jpeg_quality_regular = 0, jpeg_quality_perturbed = 0;
  double jpeg_regular = 0, jpeg_perturbed = 0;
  double accuracy_regular = 0, accuracy_perturbed = 0;  // uncompressed
};

// Summary of one configuration's records: accuracy counts failed requests as
// wrong; sizes and timings are over the successful ones.
ReportRow summarize_records(std::span<const ImageRecord> records);
// Sum of the stages that ran on the client.
double client_compute_us(const pipeline::Timings& t);

struct ExperimentReport {
  std::string mode;  // in-process | services
  std::string dataset;
  std::size_t eval_images = 0;
  std::uint64_t seed = 0;
  std::string started, finished;
  std::map<std::string, std::string> config;  // every setting, as text
  std::vector<ReportRow> rows;
  std::vector<SubsamplingStudy> subsampling;
  std::vector<CompressionStudy> compression;
  std::vector<ImageRecord> records;  // empty unless per-image output was requested
};

// Fixed column order, independent of the rows.
std::vector<std::string> csv_columns();
std::string to_csv(const std::vector<ReportRow>& rows);
// Inverse of to_csv for the tabular fields; FormatError on a bad header or row.
std::vector<ReportRow> parse_csv(const std::string& text);

std::string to_json(const ExperimentReport& report, bool per_image);

// Writes <prefix>.csv and <prefix>.json. Error if either cannot be written.
void emit_report(const ExperimentReport& report, const std::string& prefix, bool per_image);

std::string utc_timestamp();

}  // namespace pmc::harness
