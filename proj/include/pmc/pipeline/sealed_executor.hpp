#pragma once

#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "pmc/bytes.hpp"
#include "pmc/image.hpp"

namespace pmc::pipeline {

// Stand-in for the confidential container: the generator lives in separate
// worker processes that load its weights themselves. The host only ever sees
// images in and out over a pipe plus the attestation hash.
struct SealedConfig {
  std::string worker_path;  // empty: default_worker_path()
  std::string generator_path;
  std::size_t replicas = 1;
};

// PMC_SEALED_WORKER if set, else the worker built alongside this library.
std::string default_worker_path();

class SealedExecutor {
 public:
  // Spawns the workers and waits for each to report ready. Throws
  // UnavailableError if a worker fails to start and ModelIntegrityError if
  // replicas disagree on the weights.
  explicit SealedExecutor(SealedConfig cfg);
  ~SealedExecutor();
  SealedExecutor(const SealedExecutor&) = delete;
  SealedExecutor& operator=(const SealedExecutor&) = delete;

  // One round trip to one replica; requests are serialized per worker.
  std::vector<Image8> generate(std::span<const Image8> images);
  // Asks a live worker for the hash of the weights it holds.
  Digest8 attest();

  std::size_t replicas() const { return workers_.size(); }
  // Terminates every worker; later calls throw UnavailableError.
  void stop();

 private:
  struct Worker {
    int pid = -1;
    int to_worker = -1;
    int from_worker = -1;
    std::mutex mu;
  };
  Worker& pick();
  Bytes call(Worker& w, const Bytes& request);
  static void shut(Worker& w);

  SealedConfig cfg_;
  std::vector<std::unique_ptr<Worker>> workers_;
  std::mutex pick_mu_;
  std::size_t next_ = 0;
};

// Worker side of the channel: serves requests on `in_fd` / `out_fd` until EOF
// or a quit request. Returns the process exit code.
int run_sealed_worker(int in_fd, int out_fd, const std::string& generator_path);

}  // namespace pmc::pipeline
