#pragma once

#include <functional>
#include <optional>

#include "pmc/harness/artifacts.hpp"
#include "pmc/harness/report.hpp"
#include "pmc/pipeline/payload.hpp"

namespace pmc::harness {

enum class Mode { kInProcess, kServices };
std::string to_string(Mode m);
Mode parse_mode(const std::string& s);

struct ExperimentConfig {
  std::string dataset = "synthetic:0";
  std::size_t test_images = 1000;  // loaded test split, halved into validation and evaluation
  std::vector<std::string> models{"cnn-a"};
  std::vector<pipeline::CodecKind> codecs{pipeline::CodecKind::kPng, pipeline::CodecKind::kJpeg,
                                          pipeline::CodecKind::kNeural};
  baseline::JpegConfig client_jpeg{89, baseline::Subsampling::k444, true};
  // Edge JPEG leg; unset quality means search on the validation half.
  std::optional<int> edge_jpeg_quality;
  baseline::Subsampling edge_subsampling = baseline::Subsampling::k444;
  // quality_search floor: uncompressed-perturbed validation accuracy minus this.
  double accuracy_margin = 0.02;
  int subsampling_quality = 89;
  Mode mode = Mode::kInProcess;
  bool tls = false;
  std::size_t replicas = 1;
  std::size_t client_batch = 0;
  bool offload_comparison = true;
  bool studies = true;  // subsampling and regular-vs-perturbed compression
  bool per_image = false;
  std::uint64_t seed = 0;
  std::string model_dir;  // empty: default_model_dir()
};

ExperimentReport run_experiment(const ExperimentConfig& cfg,
                                const std::function<void(const std::string&)>& log = {});

// Edge JPEG quality for a target: quality_search over the validation
// half, falling back to the top of the grid when nothing meets the floor.
struct QualityChoice {
  int quality = 0;
  bool met_floor = false;
  double floor = 0;
};
QualityChoice choose_edge_quality(const classify::Classifier& model, std::span<const Image8> perturbed_validation,
                                  std::span<const int> labels, baseline::Subsampling subsampling, double floor);

}  // namespace pmc::harness
