#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pmc/classify/classifier.hpp"
#include "pmc/pertgen/generator.hpp"
#include "pmc/pipeline/payload.hpp"
#include "pmc/pipeline/sealed_executor.hpp"
#include "pmc/pipeline/timing.hpp"

namespace pmc::pipeline {

inline constexpr std::size_t kMaxBatch = 256;

struct TlsConfig {
  bool enabled = false;
  std::string cert_path;  // server certificate, also trusted by clients as CA
  std::string key_path;
};

// Writes a self-signed certificate for localhost / 127.0.0.1 and its key.
TlsConfig make_self_signed(const std::string& dir);

// One request as the cloud received it, for protocol-level inspection.
struct CloudObservation {
  std::string request_id;
  std::string codec;
  std::string model;
  Bytes payload;
};

struct CloudConfig {
  std::string host = "127.0.0.1";
  int port = 0;  // 0: pick a free port
  TlsConfig tls;
  // Model id -> classifier; shared read-only at serve time.
  std::map<std::string, std::shared_ptr<const classify::Classifier>> models;
  std::shared_ptr<const codec::FactorizedPrior> neural;  // null: neural payloads rejected
  std::function<void(const CloudObservation&)> observer;
};

// POST /v1/infer, POST /v1/infer_batch, GET /v1/health.
class CloudService {
 public:
  explicit CloudService(CloudConfig cfg);
  ~CloudService();
  CloudService(const CloudService&) = delete;
  CloudService& operator=(const CloudService&) = delete;

  int port() const;
  std::string url() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct EdgeConfig {
  std::string host = "127.0.0.1";
  int port = 0;
  TlsConfig tls;
  std::string cloud_url;
  std::string cloud_ca_path;  // trusted certificate for an https cloud
  std::string model_id = "cnn-a";
  CodecKind codec = CodecKind::kNeural;
  baseline::JpegConfig jpeg;
  std::shared_ptr<const codec::FactorizedPrior> neural;
  SealedConfig sealed;
  double cloud_timeout_s = 60.0;
};

// POST /v1/recognize, POST /v1/recognize_batch, GET /v1/attest.
class EdgeService {
 public:
  // Starts the sealed workers first; a neural codec paired with a different
  // generator than the one the workers attest to is a ConfigError.
  explicit EdgeService(EdgeConfig cfg);
  ~EdgeService();
  EdgeService(const EdgeService&) = delete;
  EdgeService& operator=(const EdgeService&) = delete;

  int port() const;
  std::string url() const;
  SealedExecutor& executor();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct ClientConfig {
  baseline::JpegConfig jpeg{89, baseline::Subsampling::k444, true};
  std::string ca_path;  // for https edges
  std::string run_id = "run";
  std::size_t batch = 0;  // 0: one request per image, else recognize_batch
  double timeout_s = 60.0;
};

struct ClientRecord {
  std::string request_id;
  std::size_t index = 0;
  bool ok = false;
  int status = 0;
  std::string error;
  int label = -1;
  std::string codec;  // edge-to-cloud codec and target model, as reported
  std::string model;
  std::size_t s1_bytes = 0;  // posted body length
  std::size_t s2_bytes = 0;  // edge-reported payload length
  Timings timings;
  double end_to_end_us = 0;
};

struct ClientRun {
  std::vector<ClientRecord> records;
  std::size_t s1_total = 0;
};

// JPEG-encodes and posts each image to the edge; failures become records
// with ok == false and the run continues.
ClientRun client_run(std::span<const Image8> images, const std::string& edge_url, const ClientConfig& cfg);

// On-client generation: the client perturbs and encodes locally, then posts
// straight to the cloud. Client compute is generate + encode.
struct LocalGenerationConfig {
  PayloadCodec codec;
  std::string model_id = "cnn-a";
  std::string ca_path;
  std::string run_id = "local";
  double timeout_s = 60.0;
};
ClientRun client_run_local_generation(std::span<const Image8> images, const pertgen::PerturbationGenerator& gen,
                                      const std::string& cloud_url, const LocalGenerationConfig& cfg);

// Client compute time of a record: the stages that ran on the client.
double client_compute_us(const ClientRecord& r);

// GET /v1/attest on an edge.
Digest8 fetch_attestation(const std::string& edge_url, const std::string& ca_path = {});

}  // namespace pmc::pipeline
