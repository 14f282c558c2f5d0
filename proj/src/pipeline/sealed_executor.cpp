#include "pmc/pipeline/sealed_executor.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

#include "pmc/pertgen/generator.hpp"

extern char** environ;

namespace pmc::pipeline {

namespace {

// Channel messages: one frame each, first byte is the opcode.
constexpr std::uint8_t kOpGenerate = 'G';
constexpr std::uint8_t kOpAttest = 'A';
constexpr std::uint8_t kOpQuit = 'Q';
constexpr std::uint8_t kReady = 'R';
constexpr std::uint8_t kOk = 'O';
constexpr std::uint8_t kFail = 'E';
constexpr std::uint32_t kMaxFrame = 64u << 20;

bool write_all(int fd, const std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::write(fd, p, n);
    if (k < 0 && errno == EINTR) continue;
    if (k <= 0) return false;
    p += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

bool read_all(int fd, std::uint8_t* p, std::size_t n) {
  while (n > 0) {
    const ssize_t k = ::read(fd, p, n);
    if (k < 0 && errno == EINTR) continue;
    if (k <= 0) return false;
    p += k;
    n -= static_cast<std::size_t>(k);
  }
  return true;
}

bool send_frame(int fd, const Bytes& body) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(body.size()));
  return write_all(fd, w.bytes().data(), 4) && write_all(fd, body.data(), body.size());
}

// False on EOF or a malformed length.
bool recv_frame(int fd, Bytes& body) {
  std::uint8_t len[4];
  if (!read_all(fd, len, 4)) return false;
  const std::uint32_t n = ByteReader(len).u32();
  if (n > kMaxFrame) return false;
  body.resize(n);
  return read_all(fd, body.data(), n);
}

Bytes status(std::uint8_t code, std::span<const std::uint8_t> data = {}) {
  Bytes out{code};
  out.insert(out.end(), data.begin(), data.end());
  return out;
}

Bytes failure(const std::string& message) {
  Bytes out{kFail};
  out.insert(out.end(), message.begin(), message.end());
  return out;
}

Bytes pack_images(std::uint8_t op, std::span<const Image8> images) {
  ByteWriter w;
  w.u8(op);
  w.u32(static_cast<std::uint32_t>(images.size()));
  const std::size_t h = images.empty() ? 0 : images[0].height, wd = images.empty() ? 0 : images[0].width;
  w.u16(static_cast<std::uint16_t>(h));
  w.u16(static_cast<std::uint16_t>(wd));
  for (const auto& img : images) {
    if (img.height != h || img.width != wd) throw DimensionError("sealed executor: images in one call must share a size");
    w.raw(img.pixels);
  }
  return w.take();
}

std::vector<Image8> unpack_images(ByteReader& r) {
  const auto n = r.u32();
  const std::size_t h = r.u16(), w = r.u16();
  std::vector<Image8> out;
  out.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    Image8 img(h, w);
    auto px = r.raw(img.pixels.size());
    std::copy(px.begin(), px.end(), img.pixels.begin());
    out.push_back(std::move(img));
  }
  return out;
}

}  // namespace

std::string default_worker_path() {
  if (const char* env = std::getenv("PMC_SEALED_WORKER"); env && *env) return env;
#ifdef PMC_SEALED_WORKER_PATH
  return PMC_SEALED_WORKER_PATH;
#else
  return "pmc_sealed_worker";
#endif
}

SealedExecutor::SealedExecutor(SealedConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.replicas == 0) throw ConfigError("sealed executor needs at least one replica");
  if (cfg_.worker_path.empty()) cfg_.worker_path = default_worker_path();
  // A dead worker must surface as an error on write, not kill the host.
  ::signal(SIGPIPE, SIG_IGN);
  Digest8 first{};
  for (std::size_t i = 0; i < cfg_.replicas; ++i) {
    int down[2], up[2];
    if (::pipe2(down, O_CLOEXEC) != 0 || ::pipe2(up, O_CLOEXEC) != 0) {
      stop();
      throw UnavailableError(std::string("sealed executor: pipe failed: ") + std::strerror(errno));
    }
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, down[0], 0);
    posix_spawn_file_actions_adddup2(&actions, up[1], 1);
    std::vector<std::string> args{cfg_.worker_path, cfg_.generator_path};
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    argv.push_back(nullptr);
    pid_t pid = -1;
    const int rc = posix_spawn(&pid, cfg_.worker_path.c_str(), &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    ::close(down[0]);
    ::close(up[1]);
    auto w = std::make_unique<Worker>();
    w->pid = rc == 0 ? pid : -1;
    w->to_worker = down[1];
    w->from_worker = up[0];
    if (rc != 0) {
      shut(*w);
      stop();
      throw UnavailableError("sealed executor: cannot start worker '" + cfg_.worker_path + "': " + std::strerror(rc));
    }
    Bytes hello;
    if (!recv_frame(w->from_worker, hello) || hello.empty() || hello[0] != kReady || hello.size() != 9) {
      std::string why = hello.size() > 1 && hello[0] == kFail ? std::string(hello.begin() + 1, hello.end()) : "no ready signal";
      shut(*w);
      stop();
      throw UnavailableError("sealed executor: worker failed to start: " + why);
    }
    Digest8 h;
    std::copy(hello.begin() + 1, hello.end(), h.begin());
    if (i == 0) first = h;
    workers_.push_back(std::move(w));
    if (h != first) {
      stop();
      throw ModelIntegrityError("sealed executor: replicas loaded different generator weights");
    }
  }
}

SealedExecutor::~SealedExecutor() { stop(); }

void SealedExecutor::shut(Worker& w) {
  if (w.to_worker >= 0) {
    send_frame(w.to_worker, status(kOpQuit));
    ::close(w.to_worker);
    w.to_worker = -1;
  }
  if (w.from_worker >= 0) {
    ::close(w.from_worker);
    w.from_worker = -1;
  }
  if (w.pid > 0) {
    int st = 0;
    ::waitpid(w.pid, &st, 0);
    w.pid = -1;
  }
}

void SealedExecutor::stop() {
  for (auto& w : workers_) {
    std::lock_guard lock(w->mu);
    shut(*w);
  }
}

SealedExecutor::Worker& SealedExecutor::pick() {
  if (workers_.empty()) throw UnavailableError("sealed executor has no workers");
  // Prefer an idle replica; otherwise queue on the next one in turn.
  std::lock_guard lock(pick_mu_);
  for (std::size_t k = 0; k < workers_.size(); ++k) {
    auto& w = *workers_[(next_ + k) % workers_.size()];
    if (w.mu.try_lock()) {
      w.mu.unlock();
      next_ = (next_ + k + 1) % workers_.size();
      return w;
    }
  }
  auto& w = *workers_[next_];
  next_ = (next_ + 1) % workers_.size();
  return w;
}

Bytes SealedExecutor::call(Worker& w, const Bytes& request) {
  std::lock_guard lock(w.mu);
  if (w.to_worker < 0) throw UnavailableError("sealed executor is stopped");
  Bytes reply;
  if (!send_frame(w.to_worker, request) || !recv_frame(w.from_worker, reply) || reply.empty()) {
    throw UnavailableError("sealed executor: worker " + std::to_string(w.pid) + " is not responding");
  }
  if (reply[0] == kFail) throw Error("sealed worker: " + std::string(reply.begin() + 1, reply.end()));
  if (reply[0] != kOk) throw UnavailableError("sealed executor: malformed worker reply");
  reply.erase(reply.begin());
  return reply;
}

std::vector<Image8> SealedExecutor::generate(std::span<const Image8> images) {
  if (images.empty()) return {};
  auto reply = call(pick(), pack_images(kOpGenerate, images));
  ByteReader r(reply);
  auto out = unpack_images(r);
  if (out.size() != images.size()) throw UnavailableError("sealed executor: worker returned the wrong image count");
  return out;
}

Digest8 SealedExecutor::attest() {
  auto reply = call(pick(), status(kOpAttest));
  if (reply.size() != 8) throw UnavailableError("sealed executor: malformed attestation");
  Digest8 h;
  std::copy(reply.begin(), reply.end(), h.begin());
  return h;
}

int run_sealed_worker(int in_fd, int out_fd, const std::string& generator_path) {
  pertgen::PerturbationGenerator gen;
  Digest8 hash{};
  try {
    const auto bytes = read_file(generator_path);
    gen = pertgen::PerturbationGenerator::load(bytes);
    hash = truncated_sha256(bytes);
  } catch (const std::exception& e) {
    send_frame(out_fd, failure(e.what()));
    return 1;
  }
  if (!send_frame(out_fd, status(kReady, hash))) return 1;

  Bytes request;
  while (recv_frame(in_fd, request)) {
    if (request.empty()) {
      send_frame(out_fd, failure("empty request"));
      continue;
    }
    Bytes reply;
    try {
      switch (request[0]) {
        case kOpQuit:
          return 0;
        case kOpAttest:
          reply = status(kOk, hash);
          break;
        case kOpGenerate: {
          ByteReader r(std::span<const std::uint8_t>(request).subspan(1));
          auto images = unpack_images(r);
          auto out = pertgen::generate(gen, std::span<const Image8>(images));
          reply = pack_images(kOk, out);
          break;
        }
        default:
          reply = failure("unknown opcode");
      }
    } catch (const std::exception& e) {
      reply = failure(e.what());
    }
    if (!send_frame(out_fd, reply)) return 1;
  }
  return 0;
}

}  // namespace pmc::pipeline
