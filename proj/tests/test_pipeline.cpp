#include <filesystem>
#include <mutex>
#include <random>

#include "doctest.h"
#include "httplib.h"
#include "pmc/harness/dataset.hpp"
#include "pmc/pipeline/frames.hpp"
#include "pmc/pipeline/services.hpp"

using namespace pmc;
using namespace pmc::pipeline;
namespace fs = std::filesystem;

namespace {

// Untrained models are enough to check that the deployed path computes the
// same thing as the in-process one.
struct World {
  fs::path dir;
  std::string generator_path, other_generator_path;
  pertgen::PerturbationGenerator gen{7, 8};
  std::shared_ptr<classify::Classifier> classifier;
  std::shared_ptr<codec::FactorizedPrior> neural;
  harness::Dataset data = harness::make_synthetic(256, 10, 3);

  World() {
    dir = fs::temp_directory_path() / ("pmc_pipeline_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
    generator_path = (dir / "generator.pmcc").string();
    write_file(generator_path, gen.save());
    other_generator_path = (dir / "other.pmcc").string();
    write_file(other_generator_path, pertgen::PerturbationGenerator(8, 8).save());
    classifier = std::make_shared<classify::Classifier>("cnn-a", 1);
    neural = std::make_shared<codec::FactorizedPrior>(8, 2);
    neural->set_paired_hash(gen.attestation_hash());
    neural->refresh_tables();
  }
  ~World() { fs::remove_all(dir); }

  CloudConfig cloud_config() const {
    CloudConfig c;
    c.models["cnn-a"] = classifier;
    c.neural = neural;
    return c;
  }
  EdgeConfig edge_config(const std::string& cloud_url, CodecKind kind) const {
    EdgeConfig e;
    e.cloud_url = cloud_url;
    e.codec = kind;
    e.neural = neural;
    e.sealed.generator_path = generator_path;
    return e;
  }

  // Label the deployed pipeline must return for image i.
  int oracle(std::size_t i, CodecKind kind, const baseline::JpegConfig& client_jpeg = {89, baseline::Subsampling::k444, true},
             const baseline::JpegConfig& edge_jpeg = {}) const {
    const Image8 received = baseline::jpeg_decode(baseline::jpeg_encode(data.images[i], client_jpeg));
    const Image8 perturbed = pertgen::generate(gen, received);
    PayloadCodec pc{kind, edge_jpeg, neural.get()};
    const Image8 decoded = pc.decode(pc.encode(perturbed));
    return classify::predict(*classifier, std::span<const Image8>(&decoded, 1))[0].label;
  }
};

World& world() {
  static World w;
  return w;
}

httplib::Result post(const std::string& url, const std::string& path, const httplib::Headers& h, const Bytes& body) {
  httplib::Client c(url);
  return c.Post(path, h, reinterpret_cast<const char*>(body.data()), body.size(), "application/octet-stream");
}

}  // namespace

TEST_CASE("frames and request ids round-trip") {
  std::vector<Bytes> bodies{{}, {1, 2, 3}, Bytes(70000, 9)};
  auto packed = encode_frames(bodies);
  CHECK(packed.size() == 3 * 4 + 3 + 70000);
  CHECK(decode_frames(packed) == bodies);
  packed.pop_back();
  CHECK_THROWS_AS(decode_frames(packed), FormatError);
  CHECK(decode_frames(Bytes{}).empty());

  std::vector<std::string> ids{"run-0", "run-1", "x"};
  CHECK(join_ids(ids) == "run-0,run-1,x");
  CHECK(split_ids("run-0,run-1,x") == ids);
  CHECK(split_ids("").empty());
  std::vector<std::string> bad{"a,b"};
  CHECK_THROWS_AS(join_ids(bad), FormatError);
}

TEST_CASE("codec names parse") {
  CHECK(parse_codec("png") == CodecKind::kPng);
  CHECK(parse_codec("jpeg") == CodecKind::kJpeg);
  CHECK(parse_codec("neural") == CodecKind::kNeural);
  CHECK(to_string(CodecKind::kNeural) == "neural");
  CHECK_THROWS_AS(parse_codec("webp"), ConfigError);
}

TEST_CASE("sealed workers attest to the file and match in-process generation") {
  auto& w = world();
  SealedExecutor ex({"", w.generator_path, 2});
  CHECK(ex.replicas() == 2);
  CHECK(ex.attest() == w.gen.attestation_hash());
  CHECK(ex.attest() == truncated_sha256(read_file(w.generator_path)));

  std::span<const Image8> batch(w.data.images.data(), 40);
  const auto expected = pertgen::generate(w.gen, batch);
  for (int round = 0; round < 3; ++round) {
    auto got = ex.generate(batch);
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i].pixels == expected[i].pixels);
  }

  // Concurrent callers are spread over the replicas and still get exact results.
  std::vector<std::thread> threads;
  std::atomic<int> mismatches{0};
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      const auto& img = w.data.images[static_cast<std::size_t>(t)];
      for (int k = 0; k < 5; ++k) {
        auto out = ex.generate(std::span<const Image8>(&img, 1));
        if (out[0].pixels != expected[static_cast<std::size_t>(t)].pixels) ++mismatches;
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(mismatches == 0);

  ex.stop();
  CHECK_THROWS_AS(ex.attest(), UnavailableError);
  CHECK_THROWS_AS(ex.generate(batch), UnavailableError);
}

TEST_CASE("a flipped weight byte changes the attested hash") {
  auto& w = world();
  auto bytes = read_file(w.generator_path);
  bytes[bytes.size() - 3] ^= 0x01;
  const auto path = (w.dir / "flipped.pmcc").string();
  write_file(path, bytes);
  SealedExecutor ex({"", path, 1});
  CHECK(ex.attest() != w.gen.attestation_hash());
  CHECK(ex.attest() == truncated_sha256(bytes));
}

TEST_CASE("sealed executor start failures") {
  auto& w = world();
  CHECK_THROWS_AS(SealedExecutor({"", (w.dir / "missing.pmcc").string(), 1}), UnavailableError);
  CHECK_THROWS_AS(SealedExecutor({(w.dir / "no-such-worker").string(), w.generator_path, 1}), UnavailableError);
  const auto junk = (w.dir / "junk.pmcc").string();
  write_file(junk, Bytes{'P', 'M', 'C', 'C', 1});
  CHECK_THROWS_AS(SealedExecutor({"", junk, 1}), UnavailableError);
  CHECK_THROWS_AS(SealedExecutor({"", w.generator_path, 0}), ConfigError);
}

TEST_CASE("deployed labels match the in-process pipeline for every codec") {
  auto& w = world();
  for (auto kind : {CodecKind::kPng, CodecKind::kJpeg, CodecKind::kNeural}) {
    CAPTURE(to_string(kind));
    std::mutex mu;
    std::map<std::string, std::size_t> observed;
    auto cc = w.cloud_config();
    cc.observer = [&](const CloudObservation& o) {
      std::lock_guard lock(mu);
      observed[o.request_id] = o.payload.size();
      CHECK(o.codec == to_string(kind));
      CHECK(o.model == "cnn-a");
    };
    CloudService cloud(cc);
    EdgeService edge(w.edge_config(cloud.url(), kind));
    ClientConfig client;
    client.run_id = to_string(kind);
    std::span<const Image8> images(w.data.images.data(), 24);
    auto run = client_run(images, edge.url(), client);
    REQUIRE(run.records.size() == 24);
    std::size_t s1 = 0;
    for (const auto& r : run.records) {
      CAPTURE(r.error);
      REQUIRE(r.ok);
      CHECK(r.status == 200);
      CHECK(r.label == w.oracle(r.index, kind));
      CHECK(r.s1_bytes == baseline::jpeg_encode(w.data.images[r.index], client.jpeg).size());
      CHECK(r.s2_bytes == observed.at(r.request_id));
      s1 += r.s1_bytes;
      for (const char* stage : kStages) {
        CAPTURE(stage);
        REQUIRE(r.timings.count(stage) == 1);
        CHECK(r.timings.at(stage) >= 0.0);
      }
      CHECK(stage_sum(r.timings) <= r.end_to_end_us * 1.001);
    }
    CHECK(run.s1_total == s1);
  }
}

TEST_CASE("a batch of 256 gives the same labels as single requests") {
  auto& w = world();
  CloudService cloud(w.cloud_config());
  EdgeService edge(w.edge_config(cloud.url(), CodecKind::kNeural));
  ClientConfig cfg;
  cfg.batch = 256;
  auto batched = client_run(w.data.images, edge.url(), cfg);
  REQUIRE(batched.records.size() == 256);
  for (std::size_t i = 0; i < 256; i += 17) CHECK(batched.records[i].label == w.oracle(i, CodecKind::kNeural));
  cfg.batch = 0;
  auto single = client_run(std::span<const Image8>(w.data.images.data(), 32), edge.url(), cfg);
  for (std::size_t i = 0; i < 32; ++i) {
    REQUIRE(batched.records[i].ok);
    CHECK(batched.records[i].label == single.records[i].label);
    CHECK(batched.records[i].s2_bytes == single.records[i].s2_bytes);
    CHECK(batched.records[i].timings.size() == kStages.size());
  }

  // Oversized batches are rejected outright.
  std::vector<Bytes> frames(257, baseline::jpeg_encode(w.data.images[0], {}));
  std::vector<std::string> ids;
  for (int i = 0; i < 257; ++i) ids.push_back("b" + std::to_string(i));
  auto r = post(edge.url(), "/v1/recognize_batch", {{"x-request-id", join_ids(ids)}}, encode_frames(frames));
  REQUIRE(r);
  CHECK(r->status == 400);
}

TEST_CASE("error statuses") {
  auto& w = world();
  CloudService cloud(w.cloud_config());
  const Bytes jpeg = baseline::jpeg_encode(w.data.images[0], {});

  SUBCASE("cloud rejects unknown models, unknown codecs and bad payloads") {
    PayloadCodec png;
    const Bytes payload = png.encode(w.data.images[0]);
    auto r = post(cloud.url(), "/v1/infer", {{"x-codec", "png"}, {"x-model", "resnet"}}, payload);
    REQUIRE(r);
    CHECK(r->status == 404);
    r = post(cloud.url(), "/v1/infer", {{"x-codec", "webp"}, {"x-model", "cnn-a"}}, payload);
    REQUIRE(r);
    CHECK(r->status == 415);
    r = post(cloud.url(), "/v1/infer", {{"x-codec", "png"}, {"x-model", "cnn-a"}}, Bytes{1, 2, 3});
    REQUIRE(r);
    CHECK(r->status == 400);
    r = post(cloud.url(), "/v1/infer", {{"x-codec", "png"}, {"x-model", "cnn-a"}}, png.encode(Image8(16, 16)));
    REQUIRE(r);
    CHECK(r->status == 400);

    // A Bitstring from a codec paired with another generator.
    codec::FactorizedPrior stale(8, 2);
    stale.refresh_tables();
    const Bytes bits = codec::compress(stale, w.data.images[0]).serialize();
    r = post(cloud.url(), "/v1/infer", {{"x-codec", "neural"}, {"x-model", "cnn-a"}, {"x-request-id", "s"}}, bits);
    REQUIRE(r);
    CHECK(r->status == 409);
    CHECK(r->body.find("\"s\"") != std::string::npos);
  }

  SUBCASE("edge rejects bad images") {
    EdgeService edge(w.edge_config(cloud.url(), CodecKind::kPng));
    auto r = post(edge.url(), "/v1/recognize", {{"x-request-id", "bad"}}, Bytes{0xFF, 0xD8, 0x00});
    REQUIRE(r);
    CHECK(r->status == 400);
    r = post(edge.url(), "/v1/recognize", {}, baseline::jpeg_encode(Image8(40, 32), {}));
    REQUIRE(r);
    CHECK(r->status == 400);
  }

  SUBCASE("edge maps codec and model disagreement to 415") {
    auto cfg = w.edge_config(cloud.url(), CodecKind::kPng);
    cfg.model_id = "cnn-b";
    EdgeService edge(cfg);
    auto r = post(edge.url(), "/v1/recognize", {{"x-request-id", "m"}}, jpeg);
    REQUIRE(r);
    CHECK(r->status == 415);

    auto cloud_cfg = w.cloud_config();
    cloud_cfg.neural.reset();
    CloudService plain(cloud_cfg);
    EdgeService neural_edge(w.edge_config(plain.url(), CodecKind::kNeural));
    r = post(neural_edge.url(), "/v1/recognize", {}, jpeg);
    REQUIRE(r);
    CHECK(r->status == 415);
  }

  SUBCASE("edge reports an unreachable cloud as 502") {
    CloudService doomed(w.cloud_config());
    EdgeService edge(w.edge_config(doomed.url(), CodecKind::kPng));
    doomed.stop();
    auto run = client_run(std::span<const Image8>(w.data.images.data(), 2), edge.url(), {});
    for (const auto& rec : run.records) {
      CHECK_FALSE(rec.ok);
      CHECK(rec.status == 502);
      CHECK_FALSE(rec.error.empty());
    }
  }

  SUBCASE("edge answers 503 once the sealed workers are gone") {
    EdgeService edge(w.edge_config(cloud.url(), CodecKind::kPng));
    edge.executor().stop();
    auto r = post(edge.url(), "/v1/recognize", {}, jpeg);
    REQUIRE(r);
    CHECK(r->status == 503);
    httplib::Client c(edge.url());
    auto a = c.Get("/v1/attest");
    REQUIRE(a);
    CHECK(a->status == 503);
  }

  SUBCASE("client keeps going past a dead edge") {
    auto run = client_run(std::span<const Image8>(w.data.images.data(), 2), "http://127.0.0.1:1", {});
    REQUIRE(run.records.size() == 2);
    for (const auto& rec : run.records) CHECK_FALSE(rec.ok);
  }
}

TEST_CASE("edge startup checks the codec pairing and exposes attestation") {
  auto& w = world();
  CloudService cloud(w.cloud_config());
  auto cfg = w.edge_config(cloud.url(), CodecKind::kNeural);
  cfg.sealed.generator_path = w.other_generator_path;
  CHECK_THROWS_AS(EdgeService{cfg}, ConfigError);
  cfg.codec = CodecKind::kPng;
  CHECK_NOTHROW(EdgeService{cfg});

  cfg = w.edge_config(cloud.url(), CodecKind::kNeural);
  cfg.sealed.replicas = 2;
  EdgeService edge(cfg);
  CHECK(fetch_attestation(edge.url()) == w.neural->paired_hash());
  httplib::Client c(edge.url());
  auto r = c.Get("/v1/attest");
  REQUIRE(r);
  CHECK(r->body.find("\"replicas\":2") != std::string::npos);
}

TEST_CASE("services over TLS") {
  auto& w = world();
  const auto tls = make_self_signed((w.dir / "tls").string());
  CHECK(fs::exists(tls.cert_path));
  CHECK(fs::exists(tls.key_path));
  auto cc = w.cloud_config();
  cc.tls = tls;
  CloudService cloud(cc);
  CHECK(cloud.url().rfind("https://", 0) == 0);
  auto ec = w.edge_config(cloud.url(), CodecKind::kNeural);
  ec.tls = tls;
  ec.cloud_ca_path = tls.cert_path;
  EdgeService edge(ec);
  ClientConfig client;
  client.ca_path = tls.cert_path;
  auto run = client_run(std::span<const Image8>(w.data.images.data(), 8), edge.url(), client);
  for (const auto& r : run.records) {
    CAPTURE(r.error);
    REQUIRE(r.ok);
    CHECK(r.label == w.oracle(r.index, CodecKind::kNeural));
  }
  CHECK(fetch_attestation(edge.url(), tls.cert_path) == w.gen.attestation_hash());

  // Without the certificate the client refuses the connection.
  auto untrusted = client_run(std::span<const Image8>(w.data.images.data(), 1), edge.url(), {});
  CHECK_FALSE(untrusted.records[0].ok);
}

TEST_CASE("on-client generation posts straight to the cloud") {
  auto& w = world();
  std::size_t observed = 0;
  auto cc = w.cloud_config();
  cc.observer = [&](const CloudObservation& o) { observed += o.payload.size(); };
  CloudService cloud(cc);
  LocalGenerationConfig cfg;
  cfg.codec = PayloadCodec{CodecKind::kNeural, {}, w.neural.get()};
  auto run = client_run_local_generation(std::span<const Image8>(w.data.images.data(), 10), w.gen, cloud.url(), cfg);
  std::size_t total = 0;
  for (const auto& r : run.records) {
    REQUIRE(r.ok);
    // No client JPEG leg: the client sends the perturbed image itself.
    const Image8 perturbed = pertgen::generate(w.gen, w.data.images[r.index]);
    const Image8 decoded = cfg.codec.decode(cfg.codec.encode(perturbed));
    CHECK(r.label == classify::predict(*w.classifier, std::span<const Image8>(&decoded, 1))[0].label);
    CHECK(client_compute_us(r) > 0.0);
    CHECK(client_compute_us(r) <= r.end_to_end_us);
    total += r.s1_bytes;
  }
  CHECK(total == observed);
  CHECK(run.s1_total == total);
}
