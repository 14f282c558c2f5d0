// Desk-scale acceptance run: trains the full model set once, then checks each
// criterion and prints one PASS/FAIL line per criterion.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <unistd.h>

#include "coder_oracle.hpp"
#include "density_helpers.hpp"
#include "gradcheck.hpp"
#include "pmc/harness/experiment.hpp"
#include "pmc/harness/training.hpp"
#include "pmc/nn/losses.hpp"
#include "pmc/pipeline/services.hpp"

using namespace pmc;
using pmc::testing::grad_check;
using pmc::testing::project;
using pmc::testing::random_tensor;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void note(const std::string& s) { std::cerr << "    " << s << std::endl; }

double mean(std::span<const double> v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------- 1, 2

Outcome numerics() {
  using nn::Var;
  constexpr int kSeeds = 20;
  std::map<std::string, double> worst;
  auto record = [&](const std::string& op, const testing::GradCheckResult& r) {
    worst[op] = std::max(worst[op], r.max_rel_error);
  };
  for (std::uint64_t seed = 0; seed < kSeeds; ++seed) {
    std::mt19937_64 rng(7000 + seed);
    const std::size_t stride = 1 + seed % 2, pad = seed % 3, k = seed % 4 < 2 ? 3 : 5;
    record("conv2d", grad_check({random_tensor({2, 3, 7, 7}, rng), random_tensor({4, 3, k, k}, rng), random_tensor({4}, rng)},
                                [&](const std::vector<Var<double>>& v) {
                                  return project(nn::conv2d(v[0], v[1], v[2], stride, pad), seed);
                                }));
    const std::size_t op = stride > 1 ? seed % 2 : 0;
    record("deconv2d",
           grad_check({random_tensor({2, 3, 4, 4}, rng), random_tensor({3, 2, k, k}, rng), random_tensor({2}, rng)},
                      [&](const std::vector<Var<double>>& v) {
                        return project(nn::deconv2d(v[0], v[1], v[2], stride, pad, op), seed);
                      }));
    const std::vector<nn::Tensor<double>> g{random_tensor({2, 3, 3, 3}, rng, -2, 2), random_tensor({3}, rng, 0.5, 1.5),
                                            random_tensor({3, 3}, rng, -0.8, 0.8)};
    record("gdn", grad_check(g, [&](const std::vector<Var<double>>& v) { return project(nn::gdn(v[0], v[1], v[2]), seed); }));
    record("igdn", grad_check(g, [&](const std::vector<Var<double>>& v) { return project(nn::igdn(v[0], v[1], v[2]), seed); }));
    std::vector<int> labels(6);
    for (auto& l : labels) l = static_cast<int>(rng() % 10);
    record("cross_entropy", grad_check({random_tensor({6, 10}, rng, -4, 4)}, [&](const std::vector<Var<double>>& v) {
             return nn::cross_entropy(v[0], labels);
           }));
    record("mse", grad_check({random_tensor({2, 3, 4, 4}, rng), random_tensor({2, 3, 4, 4}, rng)},
                             [](const std::vector<Var<double>>& v) { return nn::mse(v[0], v[1]); }));
    record("ssim", grad_check({random_tensor({1, 2, 12, 13}, rng, 0, 1), random_tensor({1, 2, 12, 13}, rng, 0, 1)},
                              [](const std::vector<Var<double>>& v) { return nn::ssim(v[0], v[1]); }));
    std::vector<nn::Tensor<double>> lik{random_tensor({2, 3, 2, 2}, rng, -3.0, 3.0)};
    for (auto& t : testing::random_density(3, rng)) lik.push_back(std::move(t));
    record("likelihood", grad_check(lik, [&](const std::vector<Var<double>>& v) {
             return project(entropy::likelihood(v[0], testing::pack(v, 1)), seed);
           }));
  }
  Outcome o{true, fmt("%d seeds per op; worst relative error:", kSeeds)};
  for (const auto& [op, err] : worst) {
    o.pass = o.pass && err <= 1e-4;
    o.detail += fmt(" %s %.1e", op.c_str(), err);
  }
  return o;
}

Outcome entropy_coding() {
  const auto random = testing::random_round_trips(1000, 424242);
  const auto exhaustive = testing::short_stream_sweep();
  return {random.checked == 1000 && random.failures == 0 && exhaustive.failures == 0 && exhaustive.checked == 8 * 121,
          fmt("random cases %zu/%zu exact; exact-rational oracle agrees on %zu/%zu short streams", random.checked - random.failures,
              random.checked, exhaustive.checked - exhaustive.failures, exhaustive.checked)};
}

// ---------------------------------------------------------------- desk setup

constexpr const char* kDataset = "synthetic:2026";
const baseline::JpegConfig kClientJpeg{89, baseline::Subsampling::k444, true};

struct Desk {
  fs::path dir = fs::temp_directory_path() / ("pmc_acceptance_" + std::to_string(::getpid()));
  harness::ModelStore store{dir.string()};
  Digest8 target_before{}, aux_before{}, target_after{}, aux_after{};
  harness::Dataset test;  // 1000 test images: validation and evaluation halves

  ~Desk() { fs::remove_all(dir); }

  void train() {
    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    const auto cls_data = harness::load_dataset(kDataset, harness::Split::kTrain, harness::DeskDefaults::kClassifierImages);
    classify::ClassifierTrainConfig cc;
    cc.epochs = harness::DeskDefaults::kClassifierEpochs;
    harness::train_and_save_classifier(store, "cnn-a", cls_data, cc);
    cc.seed = 1;
    harness::train_and_save_classifier(store, "cnn-b", cls_data, cc);
    note(fmt("classifiers trained (%.0f s)", elapsed()));

    // Generator training with the classifiers held here, so their hashes are
    // checked independently of the training code's own guard.
    auto target = store.load_classifier("cnn-a");
    auto aux = store.load_classifier("cnn-b");
    target_before = target.weight_hash();
    aux_before = aux.weight_hash();
    const auto gen_data = cls_data.slice(0, harness::DeskDefaults::kGeneratorImages);
    pertgen::GenTrainConfig gc;
    gc.epochs = harness::DeskDefaults::kGeneratorEpochs;
    auto gen = pertgen::train_generator(gc, &target, &aux, harness::client_view(gen_data.images, kClientJpeg),
                                        gen_data.labels);
    target_after = target.weight_hash();
    aux_after = aux.weight_hash();
    store.save_generator("cnn-a", gen.generator);
    note(fmt("generator trained (%.0f s)", elapsed()));

    const auto codec_data = cls_data.slice(cls_data.size() - harness::DeskDefaults::kCodecImages, cls_data.size());
    codec::CodecTrainConfig nc;
    nc.epochs = harness::DeskDefaults::kCodecEpochs;
    harness::train_and_save_codec(store, "cnn-a", codec_data, kClientJpeg, nc);
    note(fmt("codec trained (%.0f s)", elapsed()));

    test = harness::load_dataset(kDataset, harness::Split::kTest, 1000);
  }
};

// ---------------------------------------------------------------- 3, 4

Outcome rate_accounting(const Desk& d) {
  const auto gen = d.store.load_generator("cnn-a");
  const auto codec = d.store.load_codec("cnn-a");
  const auto eval = harness::split_halves(d.test).evaluation;
  const auto perturbed = pertgen::generate(gen, harness::client_view(eval.images, kClientJpeg));
  std::vector<double> measured, estimated;
  for (std::size_t i = 0; i < 200; ++i) {
    measured.push_back(8.0 * static_cast<double>(codec::compress(codec, perturbed[i]).payload.size()));
    estimated.push_back(codec::estimated_bits(codec, perturbed[i]));
  }
  const double m = mean(measured), e = mean(estimated);
  const double pixels = 32.0 * 32.0;
  return {std::abs(m - e) <= 0.02 * e + 64.0,
          fmt("200 images: measured %.4f bpp (%.1f bits) vs estimate %.4f bpp (%.1f bits); gap %.1f bits, allowed %.1f",
              m / pixels, m, e / pixels, e, std::abs(m - e), 0.02 * e + 64.0)};
}

Outcome rd_training(const Desk& d) {
  const auto gen = d.store.load_generator("cnn-a");
  const auto data = harness::load_dataset(kDataset, harness::Split::kTrain, 256);
  const auto perturbed = pertgen::generate(gen, harness::client_view(data.images, kClientJpeg));
  const auto held_out = harness::split_halves(d.test).validation;
  const auto held_out_perturbed = pertgen::generate(gen, harness::client_view(held_out.images, kClientJpeg));
  // The default recipe over 20 epochs.
  const auto base = codec::train_codec(perturbed, {}, codec::CodecTrainConfig{.epochs = 20});
  const double first = base.epochs.front().train_loss, last = base.epochs.back().train_loss;
  Outcome o{last < first, fmt("256 images, 20 epochs at defaults: loss %.3f -> %.3f; sweep on %zu held-out images:", first,
                              last, held_out.size())};
  // 20 epochs at lr 1e-4 leave every lambda at the same undertrained point, so
  // the sweep trains longer at a higher rate.
  std::vector<codec::RdStats> rd;
  for (double lambda : {0.001, 0.01, 0.1}) {
    const auto r = codec::train_codec(perturbed, {}, codec::CodecTrainConfig{.lambda = lambda, .main_lr = 1e-3, .epochs = 60});
    o.pass = o.pass && r.epochs.back().train_loss < r.epochs.front().train_loss;
    rd.push_back(codec::evaluate_rd(r.model, held_out_perturbed, lambda));
    o.detail += fmt(" lambda %g bpp %.4f mse %.5f;", lambda, rd.back().bpp, rd.back().mse);
  }
  for (std::size_t i = 1; i < rd.size(); ++i) {
    o.pass = o.pass && rd[i].mse <= rd[i - 1].mse && rd[i].bpp >= rd[i - 1].bpp;
  }
  return o;
}

// ---------------------------------------------------------------- 5, 6

Outcome bandwidth_comparison(const harness::ExperimentReport& rep, double uncompressed_accuracy) {
  std::map<std::string, const harness::ReportRow*> by_codec;
  for (const auto& r : rep.rows) {
    if (r.deployment == "edge") by_codec[r.codec] = &r;
  }
  const auto& png = *by_codec.at("png");
  const auto& jpeg = *by_codec.at("jpeg");
  const auto& neural = *by_codec.at("neural");
  bool pass = neural.s2.mean < jpeg.s2.mean && jpeg.s2.mean < png.s2.mean && neural.s2.mean <= 0.6 * png.s2.mean;
  std::string detail = fmt("%zu eval images; uncompressed-perturbed accuracy %.4f;", neural.images, uncompressed_accuracy);
  for (const auto* r : {&neural, &jpeg, &png}) {
    const double drop = uncompressed_accuracy - r->accuracy;
    pass = pass && drop <= 0.02;
    detail += fmt(" %s S2 %.1f +- %.1f B acc %.4f (drop %.4f)", r->codec.c_str(), r->s2.mean, r->s2.std, r->accuracy, drop);
    if (r->codec == "jpeg") detail += fmt(" at q%d 4:4:4", r->edge_quality);
    detail += ";";
  }
  detail += fmt(" neural/PNG %.3f", neural.s2.mean / png.s2.mean);
  return {pass, detail};
}

Outcome subsampling(const harness::ExperimentReport& rep) {
  const auto& s = rep.subsampling.at(0);
  return {s.size_420.mean < s.size_444.mean && s.psnr_420 <= s.psnr_444,
          fmt("q%d over %zu perturbed images: 4:4:4 %.1f B %.2f dB acc %.4f; 4:2:0 %.1f B %.2f dB acc %.4f "
              "(full-scale reference 2057.36 B -> 1212.33 B, accuracy 91.17%% -> 11.50%%)",
              s.quality, rep.eval_images, s.size_444.mean, s.psnr_444, s.accuracy_444, s.size_420.mean, s.psnr_420,
              s.accuracy_420)};
}

// ---------------------------------------------------------------- 7

Outcome generator_efficacy(const Desk& d) {
  const auto target = d.store.load_classifier("cnn-a");
  const auto gen = d.store.load_generator("cnn-a");
  const auto eval = harness::split_halves(d.test).evaluation;
  const auto received = harness::client_view(eval.images, kClientJpeg);
  const auto perturbed = pertgen::generate(gen, received);
  const double acc = classify::accuracy(target, perturbed, eval.labels);

  // Baseline: the image content replaced by uniform noise.
  std::mt19937_64 rng(31337);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<Image8> noise(eval.size());
  for (auto& img : noise) {
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(byte(rng));
  }
  const double noise_acc = classify::accuracy(target, noise, eval.labels);
  const auto ssim = nn::ssim_per_image(to_tensor(eval.images), to_tensor(perturbed));
  const double mean_ssim = mean(ssim);
  const bool hashes = d.target_before == d.target_after && d.aux_before == d.aux_after &&
                      target.weight_hash() == d.target_before;
  return {acc >= 1.5 * noise_acc && mean_ssim <= 0.5 && hashes,
          fmt("%zu held-out images: perturbed accuracy %.4f vs uniform-noise %.4f (ratio %.2f); mean SSIM %.4f; "
              "classifier hashes %s",
              eval.size(), acc, noise_acc, noise_acc > 0 ? acc / noise_acc : INFINITY, mean_ssim,
              hashes ? "unchanged" : "CHANGED")};
}

// ---------------------------------------------------------------- 8

struct LiveRun {
  bool pass = true;
  std::string detail;
  std::size_t stage_failures = 0;
  std::size_t hash_checks = 0, hash_failures = 0;
};

LiveRun pipeline_equivalence(const Desk& d) {
  auto classifier = std::make_shared<classify::Classifier>(d.store.load_classifier("cnn-a"));
  auto neural = std::make_shared<codec::FactorizedPrior>(d.store.load_codec("cnn-a"));
  const auto gen = d.store.load_generator("cnn-a");
  const auto eval = harness::split_halves(d.test).evaluation.slice(0, 200);
  const auto tls = pipeline::make_self_signed((d.dir / "tls").string());

  std::mutex mu;
  std::map<std::string, Bytes> observed;
  pipeline::CloudConfig cc;
  cc.tls = tls;
  cc.models["cnn-a"] = classifier;
  cc.neural = neural;
  cc.observer = [&](const pipeline::CloudObservation& o) {
    std::lock_guard lock(mu);
    observed[o.request_id] = o.payload;
  };
  pipeline::CloudService cloud(std::move(cc));

  LiveRun out;
  const baseline::JpegConfig edge_jpeg{80, baseline::Subsampling::k444, true};
  for (auto kind : {pipeline::CodecKind::kPng, pipeline::CodecKind::kJpeg, pipeline::CodecKind::kNeural}) {
    const auto name = pipeline::to_string(kind);
    pipeline::EdgeConfig ec;
    ec.tls = tls;
    ec.cloud_url = cloud.url();
    ec.cloud_ca_path = tls.cert_path;
    ec.codec = kind;
    ec.jpeg = edge_jpeg;
    ec.neural = neural;
    ec.sealed.generator_path = d.store.generator_path("cnn-a");
    ec.sealed.replicas = 2;
    pipeline::EdgeService edge(std::move(ec));
    const Digest8 attested = pipeline::fetch_attestation(edge.url(), tls.cert_path);

    pipeline::ClientConfig cl;
    cl.jpeg = kClientJpeg;
    cl.ca_path = tls.cert_path;
    cl.run_id = name;
    const auto run = pipeline::client_run(eval.images, edge.url(), cl);

    // In-process composition of the same stages.
    const pipeline::PayloadCodec pc{kind, edge_jpeg, neural.get()};
    std::size_t agree = 0, s1_exact = 0, s2_exact = 0, encoded_only = 0, s1_sum = 0, s1_oracle = 0;
    for (const auto& r : run.records) {
      const Bytes body = baseline::jpeg_encode(eval.images[r.index], kClientJpeg);
      const Image8 perturbed = pertgen::generate(gen, baseline::jpeg_decode(body));
      const Bytes payload = pc.encode(perturbed);
      const Image8 decoded = pc.decode(payload);
      const int label = classify::predict(*classifier, std::span<const Image8>(&decoded, 1))[0].label;
      agree += r.ok && r.label == label;
      s1_exact += r.s1_bytes == body.size();
      s1_sum += r.s1_bytes;
      s1_oracle += body.size();
      Bytes seen;
      {
        std::lock_guard lock(mu);
        auto it = observed.find(r.request_id);
        if (it != observed.end()) seen = it->second;
      }
      s2_exact += r.s2_bytes == seen.size() && seen == payload;
      // The cloud only ever sees the encoded form.
      const bool encoded = kind == pipeline::CodecKind::kPng    ? seen.size() > 8 && seen[1] == 'P' && seen[2] == 'N'
                           : kind == pipeline::CodecKind::kJpeg ? seen.size() > 2 && seen[0] == 0xFF && seen[1] == 0xD8
                                                                : seen.size() > 4 && seen[0] == 'P' && seen[3] == 'B';
      encoded_only += encoded && seen != perturbed.pixels;
      if (kind == pipeline::CodecKind::kNeural) {
        ++out.hash_checks;
        try {
          out.hash_failures += codec::Bitstring::parse(seen).hash != attested;
        } catch (const Error&) {
          ++out.hash_failures;
        }
      }
      double stages = 0;
      for (const char* s : pipeline::kStages) {
        auto it = r.timings.find(s);
        if (it == r.timings.end() || it->second < 0) {
          ++out.stage_failures;
          break;
        }
        stages += it->second;
      }
      if (stages > r.end_to_end_us || stages < 0.95 * r.end_to_end_us) ++out.stage_failures;
    }
    const std::size_t n = run.records.size();
    const bool ok = n == 200 && agree == n && s1_exact == n && s2_exact == n && encoded_only == n &&
                    s1_sum == run.s1_total && s1_oracle == run.s1_total;
    out.pass = out.pass && ok;
    out.detail += fmt(" %s: %zu/%zu labels agree, S1 exact %zu/%zu (total %zu B), S2 exact %zu/%zu;", name.c_str(), agree,
                      n, s1_exact, n, run.s1_total, s2_exact, n);
  }
  out.detail = "200 images over TLS with 2 sealed replicas;" + out.detail;
  return out;
}

// ---------------------------------------------------------------- 9, 10

Outcome offloading(const harness::ExperimentReport& rep, const std::string& report_prefix) {
  const harness::ReportRow *edge = nullptr, *local = nullptr;
  for (const auto& r : rep.rows) {
    if (r.deployment == "edge" && r.codec == "neural") edge = &r;
    if (r.deployment == "on-client") local = &r;
  }
  if (!edge || !local) return {false, "report lacks the offloaded or on-client row"};
  return {edge->images == 200 && local->images == 200 && edge->client_compute_us < local->client_compute_us,
          fmt("200 images: client compute offloaded %.1f us vs on-client %.1f us (%.2fx); end-to-end %.1f vs %.1f us; "
              "report %s.csv",
              edge->client_compute_us, local->client_compute_us, local->client_compute_us / edge->client_compute_us,
              edge->end_to_end_us, local->end_to_end_us, report_prefix.c_str())};
}

Outcome timing_integrity(const harness::ExperimentReport& rep, const LiveRun& live) {
  bool pass = live.stage_failures == 0 && live.hash_checks == 200 && live.hash_failures == 0;
  std::string detail = fmt("live run: %zu per-image stage failures, %zu/%zu Bitstring hashes match /v1/attest; residuals:",
                           live.stage_failures, live.hash_checks - live.hash_failures, live.hash_checks);
  for (const auto& r : rep.rows) {
    double sum = 0;
    bool nonneg = true;
    for (const auto& [s, us] : r.stage_mean_us) {
      sum += us;
      nonneg = nonneg && us >= 0;
    }
    const double residual = (r.end_to_end_us - sum) / r.end_to_end_us;
    pass = pass && nonneg && residual >= 0 && residual <= 0.05;
    detail += fmt(" %s %.2f%%", r.config.c_str(), 100 * residual);
    if (r.codec == "neural" && r.deployment == "edge") {
      pass = pass && !r.attested_hash.empty() && r.attested_hash == r.bitstring_hash;
      detail += fmt(" (hash %s)", r.bitstring_hash.c_str());
    }
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string report_prefix = argc > 1 ? argv[1] : "acceptance_report";
  int failed = 0;
  auto run = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << name << ", " << fmt("%.1f", s)
              << " s): " << o.detail << std::endl;
  };

  run(1, "numerics", numerics);
  run(2, "entropy coding losslessness", entropy_coding);

  Desk desk;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    desk.train();
  } catch (const std::exception& e) {
    std::cout << "FAIL desk setup: " << e.what() << std::endl;
    return 1;
  }
  std::cerr << fmt("    desk setup %.0f s", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count())
            << std::endl;

  run(3, "rate accounting", [&] { return rate_accounting(desk); });
  run(4, "RD training behavior", [&] { return rd_training(desk); });

  harness::ExperimentReport bandwidth;
  double uncompressed = 0;
  try {
    harness::ExperimentConfig cfg;
    cfg.dataset = kDataset;
    cfg.test_images = 1000;
    cfg.model_dir = desk.store.dir();
    cfg.offload_comparison = false;
    bandwidth = harness::run_experiment(cfg);
    const auto eval = harness::split_halves(desk.test).evaluation;
    uncompressed = classify::accuracy(desk.store.load_classifier("cnn-a"),
                                      pertgen::generate(desk.store.load_generator("cnn-a"),
                                                        harness::client_view(eval.images, kClientJpeg)),
                                      eval.labels);
    harness::emit_report(bandwidth, report_prefix + "_bandwidth", false);
  } catch (const std::exception& e) {
    note(std::string("bandwidth experiment threw: ") + e.what());
  }
  run(5, "bandwidth comparison", [&] { return bandwidth_comparison(bandwidth, uncompressed); });
  run(6, "subsampling study", [&] { return subsampling(bandwidth); });
  run(7, "generator efficacy", [&] { return generator_efficacy(desk); });

  LiveRun live;
  run(8, "pipeline oracle equivalence", [&] {
    live = pipeline_equivalence(desk);
    return Outcome{live.pass, live.detail};
  });

  harness::ExperimentReport services;
  try {
    harness::ExperimentConfig cfg;
    cfg.dataset = kDataset;
    cfg.test_images = 400;
    cfg.model_dir = desk.store.dir();
    cfg.mode = harness::Mode::kServices;
    cfg.tls = true;
    cfg.studies = false;
    cfg.per_image = true;
    services = harness::run_experiment(cfg);
    harness::emit_report(services, report_prefix + "_services", true);
  } catch (const std::exception& e) {
    note(std::string("services experiment threw: ") + e.what());
  }
  run(9, "offloading comparison", [&] { return offloading(services, report_prefix + "_services"); });
  run(10, "timing integrity", [&] { return timing_integrity(services, live); });

  std::cout << (failed == 0 ? "all criteria passed" : std::to_string(failed) + " criteria failed") << std::endl;
  return failed == 0 ? 0 : 1;
}
