#include "pmc/pipeline/services.hpp"

#include <atomic>
#include <filesystem>
#include <mutex>
#include <nlohmann/json.hpp>
#include <thread>

#include <openssl/evp.h>
#include <openssl/pem.h>
#include <openssl/x509v3.h>

#include "httplib.h"
#include "pmc/pipeline/frames.hpp"

namespace pmc::pipeline {

using nlohmann::json;

double stage_sum(const Timings& t) {
  double s = 0;
  for (const auto& [k, v] : t) s += v;
  return s;
}

namespace {

constexpr const char* kOctet = "application/octet-stream";
constexpr const char* kJson = "application/json";

std::unique_ptr<httplib::Server> make_server(const TlsConfig& tls) {
  if (!tls.enabled) return std::make_unique<httplib::Server>();
  auto srv = std::make_unique<httplib::SSLServer>(tls.cert_path.c_str(), tls.key_path.c_str());
  if (!srv->is_valid()) throw ConfigError("cannot load TLS certificate '" + tls.cert_path + "' / key '" + tls.key_path + "'");
  return srv;
}

std::unique_ptr<httplib::Client> make_client(const std::string& url, const std::string& ca_path, double timeout_s) {
  auto c = std::make_unique<httplib::Client>(url);
  if (!c->is_valid()) throw ConfigError("invalid url '" + url + "'");
  if (!ca_path.empty()) c->set_ca_cert_path(ca_path);
  const auto sec = static_cast<time_t>(timeout_s);
  const auto usec = static_cast<time_t>((timeout_s - static_cast<double>(sec)) * 1e6);
  c->set_connection_timeout(5, 0);
  c->set_tcp_nodelay(true);
  c->set_keep_alive(true);
  c->set_read_timeout(sec, usec);
  c->set_write_timeout(sec, usec);
  return c;
}

// Owns a bound server and the thread running its accept loop.
struct Listener {
  std::unique_ptr<httplib::Server> server;
  std::thread thread;
  int port = 0;
  std::string scheme;
  std::string host;

  void start(const std::string& h, int p, bool tls) {
    host = h;
    scheme = tls ? "https" : "http";
    server->set_tcp_nodelay(true);
    server->set_read_timeout(60, 0);
    server->set_write_timeout(60, 0);
    server->set_payload_max_length(256u << 20);
    if (p == 0) {
      port = server->bind_to_any_port(h);
      if (port <= 0) throw UnavailableError("cannot bind " + h);
    } else {
      if (!server->bind_to_port(h, p)) throw UnavailableError("cannot bind " + h + ":" + std::to_string(p));
      port = p;
    }
    thread = std::thread([s = server.get()] { s->listen_after_bind(); });
    server->wait_until_ready();
  }
  void stop() {
    if (server) server->stop();
    if (thread.joinable()) thread.join();
  }
  std::string url() const { return scheme + "://" + host + ":" + std::to_string(port); }
};

void reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

json error_body(const std::string& id, const std::string& message) {
  return json{{"request_id", id}, {"error", message}};
}

std::string describe(httplib::Error e) { return httplib::to_string(e); }

}  // namespace

// ---------------------------------------------------------------- tls

TlsConfig make_self_signed(const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  TlsConfig tls{true, (fs::path(dir) / "cert.pem").string(), (fs::path(dir) / "key.pem").string()};

  std::unique_ptr<EVP_PKEY, decltype(&EVP_PKEY_free)> key(EVP_EC_gen("P-256"), EVP_PKEY_free);
  if (!key) throw Error("EC key generation failed");
  std::unique_ptr<X509, decltype(&X509_free)> cert(X509_new(), X509_free);
  X509_set_version(cert.get(), 2);
  ASN1_INTEGER_set(X509_get_serialNumber(cert.get()), 1);
  X509_gmtime_adj(X509_getm_notBefore(cert.get()), -3600);
  X509_gmtime_adj(X509_getm_notAfter(cert.get()), 30L * 24 * 3600);
  X509_set_pubkey(cert.get(), key.get());
  X509_NAME* name = X509_get_subject_name(cert.get());
  X509_NAME_add_entry_by_txt(name, "CN", MBSTRING_ASC, reinterpret_cast<const unsigned char*>("localhost"), -1, -1, 0);
  X509_set_issuer_name(cert.get(), name);
  X509V3_CTX ctx;
  X509V3_set_ctx_nodb(&ctx);
  X509V3_set_ctx(&ctx, cert.get(), cert.get(), nullptr, nullptr, 0);
  for (auto [nid, value] : {std::pair{NID_subject_alt_name, "DNS:localhost,IP:127.0.0.1"},
                            std::pair{NID_basic_constraints, "critical,CA:TRUE"}}) {
    X509_EXTENSION* ext = X509V3_EXT_conf_nid(nullptr, &ctx, nid, value);
    if (!ext) throw Error("cannot build certificate extension");
    X509_add_ext(cert.get(), ext, -1);
    X509_EXTENSION_free(ext);
  }
  if (X509_sign(cert.get(), key.get(), EVP_sha256()) == 0) throw Error("certificate signing failed");

  auto write = [](const std::string& path, auto&& fn) {
    std::unique_ptr<FILE, decltype(&fclose)> f(std::fopen(path.c_str(), "wb"), fclose);
    if (!f || fn(f.get()) != 1) throw Error("cannot write '" + path + "'");
  };
  write(tls.key_path, [&](FILE* f) { return PEM_write_PrivateKey(f, key.get(), nullptr, nullptr, 0, nullptr, nullptr); });
  write(tls.cert_path, [&](FILE* f) { return PEM_write_X509(f, cert.get()); });
  return tls;
}

// ---------------------------------------------------------------- cloud

struct CloudService::Impl {
  CloudConfig cfg;
  Listener listener;

  struct Item {
    std::string id;
    int status = 200;
    std::string error;
    Image8 image;
    double decode_us = 0;
  };

  // Resolves headers to a model and codec or fills an error status.
  const classify::Classifier* resolve(const httplib::Request& req, PayloadCodec& pc, int& status,
                                      std::string& error) const {
    const auto model = req.get_header_value("x-model");
    auto it = cfg.models.find(model);
    if (it == cfg.models.end()) {
      status = 404;
      error = "unknown model '" + model + "'";
      return nullptr;
    }
    try {
      pc.kind = parse_codec(req.get_header_value("x-codec"));
    } catch (const ConfigError& e) {
      status = 415;
      error = e.what();
      return nullptr;
    }
    if (pc.kind == CodecKind::kNeural) {
      if (!cfg.neural) {
        status = 415;
        error = "neural codec is not deployed on this cloud";
        return nullptr;
      }
      pc.neural = cfg.neural.get();
    }
    return it->second.get();
  }

  void decode_item(const PayloadCodec& pc, std::span<const std::uint8_t> payload, Item& item) const {
    Stopwatch sw;
    try {
      item.image = pc.decode(payload);
      if (item.image.height != 32 || item.image.width != 32) {
        item.status = 400;
        item.error = "payload is not a 32x32 image";
      }
    } catch (const CodecVersionError& e) {
      item.status = 409;
      item.error = e.what();
    } catch (const Error& e) {
      item.status = 400;
      item.error = e.what();
    }
    item.decode_us = sw.elapsed_us();
  }

  void observe(const std::string& id, const httplib::Request& req, std::span<const std::uint8_t> payload) const {
    if (cfg.observer) {
      cfg.observer({id, req.get_header_value("x-codec"), req.get_header_value("x-model"),
                    Bytes(payload.begin(), payload.end())});
    }
  }

  void infer(const httplib::Request& req, httplib::Response& res) const {
    Stopwatch total;
    const auto id = req.get_header_value("x-request-id");
    PayloadCodec pc;
    int status = 200;
    std::string error;
    const auto* model = resolve(req, pc, status, error);
    if (!model) return reply_json(res, status, error_body(id, error));
    const auto payload = std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size());
    observe(id, req, payload);
    Item item;
    item.id = id;
    decode_item(pc, payload, item);
    if (item.status != 200) return reply_json(res, item.status, error_body(id, item.error));
    Stopwatch inf;
    const auto pred = classify::predict(*model, std::span<const Image8>(&item.image, 1), 1);
    const double inference_us = inf.elapsed_us();
    const double processing = total.elapsed_us();
    reply_json(res, 200,
               json{{"request_id", id},
                    {"label", pred[0].label},
                    {"processing_us", processing},
                    {"timings",
                     {{kCloudDecode, item.decode_us},
                      {kCloudInference, inference_us},
                      {kCloudOther, processing - item.decode_us - inference_us}}}});
  }

  void infer_batch(const httplib::Request& req, httplib::Response& res) const {
    Stopwatch total;
    const auto ids = split_ids(req.get_header_value("x-request-id"));
    PayloadCodec pc;
    int status = 200;
    std::string error;
    const auto* model = resolve(req, pc, status, error);
    if (!model) return reply_json(res, status, error_body(join_ids(ids), error));
    std::vector<Bytes> frames;
    try {
      frames = decode_frames(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()));
    } catch (const FormatError& e) {
      return reply_json(res, 400, error_body("", e.what()));
    }
    if (frames.size() != ids.size()) {
      return reply_json(res, 400, error_body("", "frame count " + std::to_string(frames.size()) +
                                                     " does not match request id count " + std::to_string(ids.size())));
    }
    if (frames.size() > kMaxBatch) return reply_json(res, 400, error_body("", "batch larger than 256"));

    std::vector<Item> items(frames.size());
    std::vector<Image8> good;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      items[i].id = ids[i];
      observe(ids[i], req, frames[i]);
      decode_item(pc, frames[i], items[i]);
      if (items[i].status == 200) good.push_back(items[i].image);
    }
    Stopwatch inf;
    const auto preds = classify::predict(*model, good);
    const double inference_each = good.empty() ? 0.0 : inf.elapsed_us() / static_cast<double>(good.size());
    const double processing = total.elapsed_us();
    const double share = processing / static_cast<double>(std::max<std::size_t>(items.size(), 1));
    json results = json::array();
    for (std::size_t i = 0, g = 0; i < items.size(); ++i) {
      const auto& it = items[i];
      if (it.status != 200) {
        results.push_back({{"request_id", it.id}, {"status", it.status}, {"error", it.error}});
        continue;
      }
      results.push_back({{"request_id", it.id},
                         {"status", 200},
                         {"label", preds[g++].label},
                         {"processing_us", share},
                         {"timings",
                          {{kCloudDecode, it.decode_us},
                           {kCloudInference, inference_each},
                           {kCloudOther, share - it.decode_us - inference_each}}}});
    }
    reply_json(res, 200, json{{"results", results}, {"processing_us", processing}});
  }
};

CloudService::CloudService(CloudConfig cfg) : impl_(std::make_unique<Impl>()) {
  impl_->cfg = std::move(cfg);
  if (impl_->cfg.models.empty()) throw ConfigError("cloud service needs at least one model");
  if (impl_->cfg.neural) {
    // Coding tables must exist before concurrent requests arrive.
    (void)impl_->cfg.neural->tables();
  }
  auto& l = impl_->listener;
  l.server = make_server(impl_->cfg.tls);
  Impl* self = impl_.get();
  l.server->Post("/v1/infer", [self](const httplib::Request& req, httplib::Response& res) { self->infer(req, res); });
  l.server->Post("/v1/infer_batch",
                 [self](const httplib::Request& req, httplib::Response& res) { self->infer_batch(req, res); });
  l.server->Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
    reply_json(res, 200, json{{"status", "ok"}});
  });
  l.start(impl_->cfg.host, impl_->cfg.port, impl_->cfg.tls.enabled);
}

CloudService::~CloudService() { stop(); }
int CloudService::port() const { return impl_->listener.port; }
std::string CloudService::url() const { return impl_->listener.url(); }
void CloudService::stop() { impl_->listener.stop(); }

// ---------------------------------------------------------------- edge

struct EdgeService::Impl {
  EdgeConfig cfg;
  std::unique_ptr<SealedExecutor> executor;
  PayloadCodec codec;
  Listener listener;
  std::atomic<std::uint64_t> anon{0};

  // Keep-alive connections to the cloud, one in use per handler thread.
  std::mutex pool_mu;
  std::vector<std::unique_ptr<httplib::Client>> pool;

  struct Lease {
    Impl* owner;
    std::unique_ptr<httplib::Client> client;
    ~Lease() {
      if (!client) return;
      std::lock_guard lock(owner->pool_mu);
      owner->pool.push_back(std::move(client));
    }
    httplib::Client* operator->() { return client.get(); }
  };
  Lease cloud_client() {
    {
      std::lock_guard lock(pool_mu);
      if (!pool.empty()) {
        auto c = std::move(pool.back());
        pool.pop_back();
        return {this, std::move(c)};
      }
    }
    return {this, make_client(cfg.cloud_url, cfg.cloud_ca_path, cfg.cloud_timeout_s)};
  }

  std::string request_id(const httplib::Request& req) {
    auto id = req.get_header_value("x-request-id");
    return id.empty() ? "edge-" + std::to_string(anon++) : id;
  }

  // Cloud statuses that mean the edge and cloud disagree on codec or model.
  static int relay_status(int cloud_status) {
    return cloud_status == 404 || cloud_status == 409 || cloud_status == 415 ? 415 : 502;
  }

  void recognize(const httplib::Request& req, httplib::Response& res) {
    Stopwatch total;
    const auto id = request_id(req);
    Timings t;
    Image8 image;
    try {
      image = baseline::jpeg_decode(
          std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()));
    } catch (const DecodeError& e) {
      return reply_json(res, 400, error_body(id, e.what()));
    }
    if (image.height != 32 || image.width != 32) return reply_json(res, 400, error_body(id, "image must be 32x32"));
    t[kEdgeDecode] = total.elapsed_us();

    Stopwatch sw;
    std::vector<Image8> perturbed;
    try {
      perturbed = executor->generate(std::span<const Image8>(&image, 1));
    } catch (const UnavailableError& e) {
      return reply_json(res, 503, error_body(id, e.what()));
    }
    t[kPerturbationGenerate] = sw.lap_us();
    const Bytes payload = codec.encode(perturbed[0]);
    t[kEdgeEncode] = sw.lap_us();

    auto cloud = cloud_client();
    httplib::Headers headers{{"x-request-id", id}, {"x-codec", to_string(cfg.codec)}, {"x-model", cfg.model_id}};
    auto r = cloud->Post("/v1/infer", headers, reinterpret_cast<const char*>(payload.data()), payload.size(), kOctet);
    const double rtt = sw.lap_us();
    if (!r) return reply_json(res, 502, error_body(id, "cloud unreachable: " + describe(r.error())));
    if (r->status != 200) {
      std::string why = r->body;
      try {
        why = json::parse(r->body).value("error", r->body);
      } catch (const json::exception&) {
      }
      return reply_json(res, relay_status(r->status),
                        error_body(id, "cloud rejected payload (" + std::to_string(r->status) + "): " + why));
    }
    json cj;
    try {
      cj = json::parse(r->body);
      for (const auto& [k, v] : cj.at("timings").items()) t[k] = v.get<double>();
      t[kNetEdgeCloud] = rtt - cj.at("processing_us").get<double>();
    } catch (const json::exception& e) {
      return reply_json(res, 502, error_body(id, std::string("malformed cloud response: ") + e.what()));
    }
    const double processing = total.elapsed_us();
    t[kEdgeOther] = processing - t[kEdgeDecode] - t[kPerturbationGenerate] - t[kEdgeEncode] - rtt;
    reply_json(res, 200,
               json{{"request_id", id},
                    {"label", cj.at("label")},
                    {"codec", to_string(cfg.codec)},
                    {"model", cfg.model_id},
                    {"s2_bytes", payload.size()},
                    {"processing_us", processing},
                    {"timings", t}});
  }

  void recognize_batch(const httplib::Request& req, httplib::Response& res) {
    Stopwatch total;
    const auto ids = split_ids(req.get_header_value("x-request-id"));
    std::vector<Bytes> frames;
    try {
      frames = decode_frames(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()));
    } catch (const FormatError& e) {
      return reply_json(res, 400, error_body("", e.what()));
    }
    if (frames.size() != ids.size()) return reply_json(res, 400, error_body("", "frame and request id counts differ"));
    if (frames.empty() || frames.size() > kMaxBatch) return reply_json(res, 400, error_body("", "batch size must be 1..256"));
    const std::size_t n = frames.size();

    std::vector<json> results(n);
    std::vector<std::size_t> good;
    std::vector<Image8> images;
    Stopwatch sw;
    for (std::size_t i = 0; i < n; ++i) {
      try {
        auto img = baseline::jpeg_decode(frames[i]);
        if (img.height != 32 || img.width != 32) throw DecodeError("image must be 32x32");
        images.push_back(std::move(img));
        good.push_back(i);
      } catch (const DecodeError& e) {
        results[i] = {{"request_id", ids[i]}, {"status", 400}, {"error", e.what()}};
      }
    }
    const double decode_us = sw.lap_us();
    std::vector<Image8> perturbed;
    try {
      perturbed = executor->generate(images);
    } catch (const UnavailableError& e) {
      return reply_json(res, 503, error_body(join_ids(ids), e.what()));
    }
    const double gen_us = sw.lap_us();
    std::vector<Bytes> payloads;
    std::vector<std::string> good_ids;
    for (std::size_t k = 0; k < good.size(); ++k) {
      payloads.push_back(codec.encode(perturbed[k]));
      good_ids.push_back(ids[good[k]]);
    }
    const double encode_us = sw.lap_us();

    json cloud_results = json::array();
    double rtt = 0, cloud_processing = 0;
    if (!good.empty()) {
      auto cloud = cloud_client();
      httplib::Headers headers{
          {"x-request-id", join_ids(good_ids)}, {"x-codec", to_string(cfg.codec)}, {"x-model", cfg.model_id}};
      const auto body = encode_frames(payloads);
      auto r = cloud->Post("/v1/infer_batch", headers, reinterpret_cast<const char*>(body.data()), body.size(), kOctet);
      rtt = sw.lap_us();
      if (!r) return reply_json(res, 502, error_body(join_ids(ids), "cloud unreachable: " + describe(r.error())));
      if (r->status != 200) {
        return reply_json(res, relay_status(r->status),
                          error_body(join_ids(ids), "cloud rejected batch (" + std::to_string(r->status) + ")"));
      }
      try {
        auto cj = json::parse(r->body);
        cloud_results = cj.at("results");
        cloud_processing = cj.at("processing_us").get<double>();
      } catch (const json::exception& e) {
        return reply_json(res, 502, error_body(join_ids(ids), std::string("malformed cloud response: ") + e.what()));
      }
      if (cloud_results.size() != good.size()) return reply_json(res, 502, error_body(join_ids(ids), "cloud result count mismatch"));
    }

    // Batch-level stage times are shared evenly across the images.
    const double processing = total.elapsed_us();
    const double m = static_cast<double>(n);
    const double edge_other = processing - decode_us - gen_us - encode_us - rtt;
    for (std::size_t k = 0; k < good.size(); ++k) {
      const auto& cr = cloud_results[k];
      json& out = results[good[k]];
      if (cr.value("status", 500) != 200) {
        out = {{"request_id", ids[good[k]]}, {"status", relay_status(cr.value("status", 500))}, {"error", cr.value("error", "")}};
        continue;
      }
      Timings t;
      for (const auto& [key, v] : cr.at("timings").items()) t[key] = v.get<double>();
      t[kEdgeDecode] = decode_us / m;
      t[kPerturbationGenerate] = gen_us / m;
      t[kEdgeEncode] = encode_us / m;
      t[kNetEdgeCloud] = (rtt - cloud_processing) / m;
      t[kEdgeOther] = edge_other / m;
      // Cloud stages were shared over the good images only; rescale to n.
      const double cloud_scale = static_cast<double>(good.size()) / m;
      for (const char* s : {kCloudDecode, kCloudInference, kCloudOther}) t[s] *= cloud_scale;
      out = {{"request_id", ids[good[k]]}, {"status", 200}, {"label", cr.at("label")}, {"s2_bytes", payloads[k].size()},
             {"codec", to_string(cfg.codec)}, {"model", cfg.model_id},
             {"processing_us", processing / m}, {"timings", t}};
    }
    reply_json(res, 200, json{{"results", results}, {"processing_us", processing}});
  }

  void attest(const httplib::Request&, httplib::Response& res) {
    try {
      const auto h = executor->attest();
      reply_json(res, 200, json{{"model_hash", to_hex(h)}, {"replicas", executor->replicas()}});
    } catch (const UnavailableError& e) {
      reply_json(res, 503, json{{"error", e.what()}});
    }
  }
};

EdgeService::EdgeService(EdgeConfig cfg) : impl_(std::make_unique<Impl>()) {
  auto& im = *impl_;
  im.cfg = std::move(cfg);
  if (im.cfg.cloud_url.empty()) throw ConfigError("edge service needs a cloud url");
  im.cfg.jpeg.validate();
  im.codec.kind = im.cfg.codec;
  im.codec.jpeg = im.cfg.jpeg;
  im.codec.neural = im.cfg.neural.get();
  if (im.cfg.codec == CodecKind::kNeural && !im.cfg.neural) throw ConfigError("edge codec is neural but no codec model is loaded");
  im.executor = std::make_unique<SealedExecutor>(im.cfg.sealed);
  if (im.cfg.codec == CodecKind::kNeural) {
    const auto attested = im.executor->attest();
    if (im.cfg.neural->paired_hash() != attested) {
      throw ConfigError("neural codec is paired with generator " + to_hex(im.cfg.neural->paired_hash()) +
                        " but the sealed workers attest " + to_hex(attested));
    }
    (void)im.cfg.neural->tables();
  }
  auto& l = im.listener;
  l.server = make_server(im.cfg.tls);
  Impl* self = impl_.get();
  l.server->Post("/v1/recognize", [self](const httplib::Request& req, httplib::Response& res) { self->recognize(req, res); });
  l.server->Post("/v1/recognize_batch",
                 [self](const httplib::Request& req, httplib::Response& res) { self->recognize_batch(req, res); });
  l.server->Get("/v1/attest", [self](const httplib::Request& req, httplib::Response& res) { self->attest(req, res); });
  l.start(im.cfg.host, im.cfg.port, im.cfg.tls.enabled);
}

EdgeService::~EdgeService() { stop(); }
int EdgeService::port() const { return impl_->listener.port; }
std::string EdgeService::url() const { return impl_->listener.url(); }
SealedExecutor& EdgeService::executor() { return *impl_->executor; }
void EdgeService::stop() {
  impl_->listener.stop();
  if (impl_->executor) impl_->executor->stop();
}

// ---------------------------------------------------------------- clients

namespace {

void fill_from_response(ClientRecord& rec, const httplib::Result& r, double rtt, const char* net_stage) {
  if (!r) {
    rec.error = "request failed: " + describe(r.error());
    return;
  }
  rec.status = r->status;
  try {
    auto j = json::parse(r->body);
    if (r->status != 200) {
      rec.error = j.value("error", r->body);
      return;
    }
    rec.label = j.at("label").get<int>();
    rec.codec = j.value("codec", "");
    rec.model = j.value("model", "");
    rec.s2_bytes = j.value("s2_bytes", std::size_t{0});
    for (const auto& [k, v] : j.at("timings").items()) rec.timings[k] = v.get<double>();
    rec.timings[net_stage] = rtt - j.at("processing_us").get<double>();
    rec.ok = true;
  } catch (const json::exception& e) {
    rec.error = std::string("malformed response: ") + e.what();
  }
}

}  // namespace

ClientRun client_run(std::span<const Image8> images, const std::string& edge_url, const ClientConfig& cfg) {
  ClientRun run;
  run.records.resize(images.size());
  auto client = make_client(edge_url, cfg.ca_path, cfg.timeout_s);
  for (std::size_t i = 0; i < images.size(); ++i) {
    run.records[i].index = i;
    run.records[i].request_id = cfg.run_id + "-" + std::to_string(i);
  }

  if (cfg.batch == 0) {
    for (std::size_t i = 0; i < images.size(); ++i) {
      auto& rec = run.records[i];
      Stopwatch e2e;
      const Bytes body = baseline::jpeg_encode(images[i], cfg.jpeg);
      const double encode_us = e2e.elapsed_us();
      rec.s1_bytes = body.size();
      run.s1_total += body.size();
      Stopwatch rt;
      auto r = client->Post("/v1/recognize", {{"x-request-id", rec.request_id}},
                            reinterpret_cast<const char*>(body.data()), body.size(), "image/jpeg");
      const double rtt = rt.elapsed_us();
      fill_from_response(rec, r, rtt, kNetClientEdge);
      rec.timings[kClientJpegEncode] = encode_us;
      rec.end_to_end_us = e2e.elapsed_us();
    }
    return run;
  }

  for (std::size_t start = 0; start < images.size(); start += cfg.batch) {
    const std::size_t n = std::min({cfg.batch, kMaxBatch, images.size() - start});
    Stopwatch e2e;
    std::vector<Bytes> bodies;
    std::vector<std::string> ids;
    std::vector<double> encode_us;
    for (std::size_t k = 0; k < n; ++k) {
      Stopwatch sw;
      bodies.push_back(baseline::jpeg_encode(images[start + k], cfg.jpeg));
      encode_us.push_back(sw.elapsed_us());
      ids.push_back(run.records[start + k].request_id);
      run.records[start + k].s1_bytes = bodies.back().size();
      run.s1_total += bodies.back().size();
    }
    const Bytes body = encode_frames(bodies);
    Stopwatch rt;
    auto r = client->Post("/v1/recognize_batch", {{"x-request-id", join_ids(ids)}},
                          reinterpret_cast<const char*>(body.data()), body.size(), kOctet);
    const double rtt = rt.elapsed_us();
    std::map<std::string, json> by_id;
    std::string batch_error;
    double edge_processing = 0;
    if (!r) {
      batch_error = "request failed: " + describe(r.error());
    } else {
      try {
        auto j = json::parse(r->body);
        if (r->status != 200) {
          batch_error = j.value("error", r->body);
        } else {
          edge_processing = j.at("processing_us").get<double>();
          for (const auto& item : j.at("results")) by_id[item.at("request_id").get<std::string>()] = item;
        }
      } catch (const json::exception& e) {
        batch_error = std::string("malformed response: ") + e.what();
      }
    }
    const double m = static_cast<double>(n);
    double encode_total = 0;
    for (double v : encode_us) encode_total += v;
    const double e2e_each = e2e.elapsed_us() / m;
    for (std::size_t k = 0; k < n; ++k) {
      auto& rec = run.records[start + k];
      rec.status = r ? r->status : 0;
      rec.end_to_end_us = e2e_each;
      if (!batch_error.empty()) {
        rec.error = batch_error;
        continue;
      }
      auto it = by_id.find(rec.request_id);
      if (it == by_id.end()) {
        rec.error = "no result for request id";
        continue;
      }
      const auto& item = it->second;
      rec.status = item.value("status", 500);
      if (rec.status != 200) {
        rec.error = item.value("error", "");
        continue;
      }
      rec.label = item.at("label").get<int>();
      rec.codec = item.value("codec", "");
      rec.model = item.value("model", "");
      rec.s2_bytes = item.value("s2_bytes", std::size_t{0});
      for (const auto& [key, v] : item.at("timings").items()) rec.timings[key] = v.get<double>();
      rec.timings[kClientJpegEncode] = encode_total / m;
      rec.timings[kNetClientEdge] = (rtt - edge_processing) / m;
      rec.ok = true;
    }
  }
  return run;
}

ClientRun client_run_local_generation(std::span<const Image8> images, const pertgen::PerturbationGenerator& gen,
                                      const std::string& cloud_url, const LocalGenerationConfig& cfg) {
  ClientRun run;
  auto client = make_client(cloud_url, cfg.ca_path, cfg.timeout_s);
  for (std::size_t i = 0; i < images.size(); ++i) {
    ClientRecord rec;
    rec.index = i;
    rec.request_id = cfg.run_id + "-" + std::to_string(i);
    Stopwatch e2e;
    const Image8 perturbed = pertgen::generate(gen, images[i]);
    const double gen_us = e2e.elapsed_us();
    Stopwatch sw;
    const Bytes body = cfg.codec.encode(perturbed);
    const double encode_us = sw.lap_us();
    rec.s1_bytes = body.size();
    rec.s2_bytes = body.size();
    run.s1_total += body.size();
    auto r = client->Post("/v1/infer",
                          {{"x-request-id", rec.request_id}, {"x-codec", to_string(cfg.codec.kind)}, {"x-model", cfg.model_id}},
                          reinterpret_cast<const char*>(body.data()), body.size(), kOctet);
    const double rtt = sw.lap_us();
    fill_from_response(rec, r, rtt, kNetClientCloud);
    rec.s2_bytes = body.size();
    rec.timings[kClientPerturbationGenerate] = gen_us;
    rec.timings[kClientEncode] = encode_us;
    rec.end_to_end_us = e2e.elapsed_us();
    run.records.push_back(std::move(rec));
  }
  return run;
}

double client_compute_us(const ClientRecord& r) {
  double s = 0;
  for (const auto& [k, v] : r.timings) {
    if (k.rfind("client-", 0) == 0) s += v;
  }
  return s;
}

Digest8 fetch_attestation(const std::string& edge_url, const std::string& ca_path) {
  auto client = make_client(edge_url, ca_path, 10.0);
  auto r = client->Get("/v1/attest");
  if (!r) throw UnavailableError("attestation request failed: " + describe(r.error()));
  if (r->status != 200) throw UnavailableError("attestation unavailable (status " + std::to_string(r->status) + ")");
  try {
    return digest_from_hex(json::parse(r->body).at("model_hash").get<std::string>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("malformed attestation: ") + e.what());
  }
}

}  // namespace pmc::pipeline
