#include "pmc/harness/experiment.hpp"

#include <filesystem>
#include <mutex>
#include <numeric>
#include <set>
#include <unistd.h>

#include "pmc/nn/losses.hpp"
#include "pmc/pipeline/services.hpp"

namespace pmc::harness {

using pipeline::CodecKind;
using pipeline::PayloadCodec;
using pipeline::Stopwatch;
using pipeline::Timings;

std::string to_string(Mode m) { return m == Mode::kInProcess ? "in-process" : "services"; }

Mode parse_mode(const std::string& s) {
  if (s == "in-process") return Mode::kInProcess;
  if (s == "services") return Mode::kServices;
  throw ConfigError("unknown mode '" + s + "' (expected in-process or services)");
}

QualityChoice choose_edge_quality(const classify::Classifier& model, std::span<const Image8> perturbed_validation,
                                  std::span<const int> labels, baseline::Subsampling subsampling, double floor) {
  auto eval = [&](const baseline::JpegConfig& c) {
    std::vector<Image8> decoded;
    double bytes = 0;
    for (const auto& x : perturbed_validation) {
      const Bytes b = baseline::jpeg_encode(x, c);
      bytes += static_cast<double>(b.size());
      decoded.push_back(baseline::jpeg_decode(b));
    }
    return baseline::QualityEval{classify::accuracy(model, decoded, labels),
                                 bytes / static_cast<double>(perturbed_validation.size())};
  };
  try {
    return {baseline::quality_search(subsampling, eval, floor).quality, true, floor};
  } catch (const NotFoundError&) {
    return {baseline::quality_grid().front(), false, floor};
  }
}

namespace {

double mean_ssim(std::span<const Image8> a, std::span<const Image8> b) {
  if (a.empty()) return 0;
  const auto s = nn::ssim_per_image(to_tensor(a), to_tensor(b));
  return std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
}

// Everything one target model's rows need.
struct Target {
  std::string id;
  std::shared_ptr<classify::Classifier> classifier;
  pertgen::PerturbationGenerator generator;
  std::shared_ptr<codec::FactorizedPrior> neural;
  std::string generator_path;
  baseline::JpegConfig edge_jpeg;
};

std::string config_name(const std::string& model, const std::string& codec, const std::string& deployment) {
  return model + "/" + codec + "/" + deployment;
}

// The edge deployment composed in one process, one image at a time, with the
// same stage boundaries as the services. Network stages are zero.
std::vector<ImageRecord> run_edge_in_process(const Target& t, const PayloadCodec& pc, const Dataset& eval,
                                             const baseline::JpegConfig& client_jpeg, const std::string& name) {
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    ImageRecord rec;
    rec.config = name;
    rec.index = i;
    rec.request_id = name + "-" + std::to_string(i);
    rec.truth = eval.labels[i];
    Timings& tm = rec.timings;
    Stopwatch sw;
    const Bytes s1 = baseline::jpeg_encode(eval.images[i], client_jpeg);
    tm[pipeline::kClientJpegEncode] = sw.lap_us();
    tm[pipeline::kNetClientEdge] = 0;
    const Image8 received = baseline::jpeg_decode(s1);
    tm[pipeline::kEdgeDecode] = sw.lap_us();
    const Image8 perturbed = pertgen::generate(t.generator, received);
    tm[pipeline::kPerturbationGenerate] = sw.lap_us();
    const Bytes s2 = pc.encode(perturbed);
    tm[pipeline::kEdgeEncode] = sw.lap_us();
    tm[pipeline::kEdgeOther] = 0;
    tm[pipeline::kNetEdgeCloud] = 0;
    const Image8 decoded = pc.decode(s2);
    tm[pipeline::kCloudDecode] = sw.lap_us();
    rec.label = classify::predict(*t.classifier, std::span<const Image8>(&decoded, 1))[0].label;
    tm[pipeline::kCloudInference] = sw.lap_us();
    tm[pipeline::kCloudOther] = 0;
    rec.end_to_end_us = sw.elapsed_us();
    rec.s1_bytes = s1.size();
    rec.s2_bytes = s2.size();
    rec.ok = true;
    out.push_back(std::move(rec));
  }
  return out;
}

// On-client generation: the client perturbs the original image and sends the
// encoded result straight to the cloud.
std::vector<ImageRecord> run_on_client_in_process(const Target& t, const PayloadCodec& pc, const Dataset& eval,
                                                  const std::string& name) {
  std::vector<ImageRecord> out;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    ImageRecord rec;
    rec.config = name;
    rec.index = i;
    rec.request_id = name + "-" + std::to_string(i);
    rec.truth = eval.labels[i];
    Timings& tm = rec.timings;
    Stopwatch sw;
    const Image8 perturbed = pertgen::generate(t.generator, eval.images[i]);
    tm[pipeline::kClientPerturbationGenerate] = sw.lap_us();
    const Bytes payload = pc.encode(perturbed);
    tm[pipeline::kClientEncode] = sw.lap_us();
    tm[pipeline::kNetClientCloud] = 0;
    const Image8 decoded = pc.decode(payload);
    tm[pipeline::kCloudDecode] = sw.lap_us();
    rec.label = classify::predict(*t.classifier, std::span<const Image8>(&decoded, 1))[0].label;
    tm[pipeline::kCloudInference] = sw.lap_us();
    tm[pipeline::kCloudOther] = 0;
    rec.end_to_end_us = sw.elapsed_us();
    rec.s1_bytes = payload.size();
    rec.s2_bytes = payload.size();
    rec.ok = true;
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<ImageRecord> from_client_run(const pipeline::ClientRun& run, const Dataset& eval, const std::string& name) {
  std::vector<ImageRecord> out;
  for (const auto& r : run.records) {
    ImageRecord rec;
    rec.config = name;
    rec.request_id = r.request_id;
    rec.index = r.index;
    rec.truth = eval.labels[r.index];
    rec.label = r.label;
    rec.ok = r.ok;
    rec.error = r.error;
    rec.s1_bytes = r.s1_bytes;
    rec.s2_bytes = r.s2_bytes;
    rec.timings = r.timings;
    rec.end_to_end_us = r.end_to_end_us;
    out.push_back(std::move(rec));
  }
  return out;
}

// Hash carried by the neural payloads, or "mixed" if they disagree.
class HashCollector {
 public:
  void add(std::span<const std::uint8_t> payload) {
    std::string h;
    try {
      h = to_hex(codec::Bitstring::parse(payload).hash);
    } catch (const Error&) {
      h = "unparseable";
    }
    std::lock_guard lock(mu_);
    seen_.insert(h);
  }
  std::string result() const {
    std::lock_guard lock(mu_);
    if (seen_.empty()) return "";
    return seen_.size() == 1 ? *seen_.begin() : "mixed";
  }
  void clear() {
    std::lock_guard lock(mu_);
    seen_.clear();
  }

 private:
  mutable std::mutex mu_;
  std::set<std::string> seen_;
};

}  // namespace

ExperimentReport run_experiment(const ExperimentConfig& cfg, const std::function<void(const std::string&)>& log) {
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  if (cfg.models.empty()) throw ConfigError("experiment needs at least one target model");
  if (cfg.codecs.empty()) throw ConfigError("experiment needs at least one codec");
  if (cfg.accuracy_margin < 0) throw ConfigError("accuracy margin must be non-negative");
  cfg.client_jpeg.validate();
  if (cfg.edge_jpeg_quality) baseline::JpegConfig{*cfg.edge_jpeg_quality, cfg.edge_subsampling, true}.validate();
  if (cfg.replicas == 0) throw ConfigError("replicas must be positive");

  const ModelStore store(cfg.model_dir);
  const bool wants_neural = std::count(cfg.codecs.begin(), cfg.codecs.end(), CodecKind::kNeural) > 0;

  // Load every artifact before any work so a missing one fails fast.
  std::vector<Target> targets;
  for (const auto& id : cfg.models) {
    Target t;
    t.id = id;
    t.classifier = std::make_shared<classify::Classifier>(store.load_classifier(id));
    t.generator = store.load_generator(id);
    t.generator_path = store.generator_path(id);
    if (wants_neural) {
      t.neural = std::make_shared<codec::FactorizedPrior>(store.load_codec(id));
      if (t.neural->paired_hash() != t.generator.attestation_hash()) {
        throw ConfigError("neural codec for '" + id + "' is paired with generator " + to_hex(t.neural->paired_hash()) +
                          " but " + t.generator_path + " hashes to " + to_hex(t.generator.attestation_hash()));
      }
    }
    targets.push_back(std::move(t));
  }

  const Dataset test = load_dataset(cfg.dataset, Split::kTest, cfg.test_images);
  const Halves halves = split_halves(test);
  if (halves.evaluation.size() == 0) throw ConfigError("dataset '" + cfg.dataset + "' has no evaluation images");
  const Dataset& eval = halves.evaluation;

  ExperimentReport report;
  report.mode = to_string(cfg.mode);
  report.dataset = cfg.dataset;
  report.eval_images = eval.size();
  report.seed = cfg.seed;
  report.started = utc_timestamp();
  auto& c = report.config;
  c["dataset"] = cfg.dataset;
  c["test_images"] = std::to_string(cfg.test_images);
  c["client_jpeg"] = std::to_string(cfg.client_jpeg.quality) + "/" + baseline::to_string(cfg.client_jpeg.subsampling) +
                     (cfg.client_jpeg.optimize ? "/optimize" : "");
  c["edge_jpeg_quality"] = cfg.edge_jpeg_quality ? std::to_string(*cfg.edge_jpeg_quality) : "search";
  c["edge_subsampling"] = baseline::to_string(cfg.edge_subsampling);
  c["accuracy_margin"] = std::to_string(cfg.accuracy_margin);
  c["mode"] = to_string(cfg.mode);
  c["tls"] = cfg.tls ? "true" : "false";
  c["replicas"] = std::to_string(cfg.replicas);
  c["client_batch"] = std::to_string(cfg.client_batch);
  c["model_dir"] = store.dir();
  c["seed"] = std::to_string(cfg.seed);

  namespace fs = std::filesystem;
  pipeline::TlsConfig tls;
  fs::path tls_dir;
  if (cfg.mode == Mode::kServices && cfg.tls) {
    tls_dir = fs::temp_directory_path() / ("pmc-tls-" + std::to_string(::getpid()));
    tls = pipeline::make_self_signed(tls_dir.string());
  }

  for (auto& t : targets) {
    say("model " + t.id + ": perturbing " + std::to_string(test.size()) + " test images");
    const auto val_received = client_view(halves.validation.images, cfg.client_jpeg);
    const auto val_perturbed = pertgen::generate(t.generator, val_received);
    const auto eval_perturbed = pertgen::generate(t.generator, client_view(eval.images, cfg.client_jpeg));
    const double val_accuracy = classify::accuracy(*t.classifier, val_perturbed, halves.validation.labels);
    c["uncompressed_perturbed_accuracy." + t.id] =
        std::to_string(classify::accuracy(*t.classifier, eval_perturbed, eval.labels));
    c["validation_perturbed_accuracy." + t.id] = std::to_string(val_accuracy);

    if (cfg.edge_jpeg_quality) {
      t.edge_jpeg = {*cfg.edge_jpeg_quality, cfg.edge_subsampling, true};
    } else {
      const auto choice = choose_edge_quality(*t.classifier, val_perturbed, halves.validation.labels,
                                              cfg.edge_subsampling, val_accuracy - cfg.accuracy_margin);
      t.edge_jpeg = {choice.quality, cfg.edge_subsampling, true};
      c["edge_jpeg_search." + t.id] = std::to_string(choice.quality) + (choice.met_floor ? "" : " (floor not met)") +
                                      " floor " + std::to_string(choice.floor);
    }
    if (t.neural) c["bitstring_hash." + t.id] = to_hex(t.neural->paired_hash());

    std::unique_ptr<pipeline::CloudService> cloud;
    HashCollector hashes;
    if (cfg.mode == Mode::kServices) {
      pipeline::CloudConfig cc;
      cc.tls = tls;
      cc.models[t.id] = t.classifier;
      cc.neural = t.neural;
      cc.observer = [&hashes](const pipeline::CloudObservation& o) {
        if (o.codec == "neural") hashes.add(o.payload);
      };
      cloud = std::make_unique<pipeline::CloudService>(std::move(cc));
    }

    auto add_row = [&](std::vector<ImageRecord> records, const PayloadCodec& pc, const std::string& deployment,
                       const std::vector<Image8>& originals) {
      ReportRow row = summarize_records(records);
      row.config = config_name(t.id, pipeline::to_string(pc.kind), deployment);
      row.model = t.id;
      row.codec = pipeline::to_string(pc.kind);
      row.deployment = deployment;
      if (deployment == "edge") {
        row.client_quality = cfg.client_jpeg.quality;
        row.client_subsampling = baseline::to_string(cfg.client_jpeg.subsampling);
      }
      if (pc.kind == CodecKind::kJpeg) {
        row.edge_quality = pc.jpeg.quality;
        row.edge_subsampling = baseline::to_string(pc.jpeg.subsampling);
      }
      // What the cloud reconstructs, against what the user holds.
      std::vector<Image8> decoded;
      const auto perturbed = deployment == "edge" ? eval_perturbed : pertgen::generate(t.generator, originals);
      for (const auto& p : perturbed) decoded.push_back(pc.decode(pc.encode(p)));
      row.ssim_original_decoded = mean_ssim(originals, decoded);
      if (pc.kind == CodecKind::kNeural) {
        row.bitstring_hash = cfg.mode == Mode::kServices ? hashes.result()
                                                         : to_hex(codec::compress(*t.neural, perturbed[0]).hash);
      }
      row.seed = cfg.seed;
      row.timestamp = utc_timestamp();
      say("  " + row.config + ": accuracy " + std::to_string(row.accuracy) + ", S2 " + std::to_string(row.s2.mean) +
          " B, e2e " + std::to_string(row.end_to_end_us) + " us");
      if (cfg.per_image) {
        for (auto& r : records) report.records.push_back(std::move(r));
      }
      report.rows.push_back(std::move(row));
    };

    for (CodecKind kind : cfg.codecs) {
      const PayloadCodec pc{kind, t.edge_jpeg, t.neural.get()};
      const auto name = config_name(t.id, pipeline::to_string(kind), "edge");
      say("  running " + name);
      if (cfg.mode == Mode::kInProcess) {
        add_row(run_edge_in_process(t, pc, eval, cfg.client_jpeg, name), pc, "edge", eval.images);
        continue;
      }
      pipeline::EdgeConfig ec;
      ec.tls = tls;
      ec.cloud_url = cloud->url();
      ec.cloud_ca_path = tls.cert_path;
      ec.model_id = t.id;
      ec.codec = kind;
      ec.jpeg = t.edge_jpeg;
      ec.neural = t.neural;
      ec.sealed.generator_path = t.generator_path;
      ec.sealed.replicas = cfg.replicas;
      pipeline::EdgeService edge(std::move(ec));
      hashes.clear();
      std::string attested;
      if (kind == CodecKind::kNeural) attested = to_hex(pipeline::fetch_attestation(edge.url(), tls.cert_path));
      pipeline::ClientConfig cl;
      cl.jpeg = cfg.client_jpeg;
      cl.ca_path = tls.cert_path;
      cl.run_id = name;
      cl.batch = cfg.client_batch;
      auto run = pipeline::client_run(eval.images, edge.url(), cl);
      add_row(from_client_run(run, eval, name), pc, "edge", eval.images);
      report.rows.back().attested_hash = attested;
    }

    if (cfg.offload_comparison) {
      // The on-client baseline sends PNG, as the prior mobile-only system does.
      PayloadCodec png;
      png.kind = CodecKind::kPng;
      const auto name = config_name(t.id, "png", "on-client");
      say("  running " + name);
      if (cfg.mode == Mode::kInProcess) {
        add_row(run_on_client_in_process(t, png, eval, name), png, "on-client", eval.images);
      } else {
        pipeline::LocalGenerationConfig lc;
        lc.codec = png;
        lc.model_id = t.id;
        lc.ca_path = tls.cert_path;
        lc.run_id = name;
        auto run = pipeline::client_run_local_generation(eval.images, t.generator, cloud->url(), lc);
        add_row(from_client_run(run, eval, name), png, "on-client", eval.images);
      }
    }
    if (cloud) cloud->stop();

    if (cfg.studies) {
      say("  subsampling and compression studies");
      SubsamplingStudy s;
      s.model = t.id;
      s.quality = cfg.subsampling_quality;
      for (auto sub : {baseline::Subsampling::k444, baseline::Subsampling::k420}) {
        std::vector<double> sizes;
        std::vector<Image8> decoded;
        double psnr_total = 0;
        for (const auto& p : eval_perturbed) {
          const Bytes b = baseline::jpeg_encode(p, {cfg.subsampling_quality, sub, true});
          sizes.push_back(static_cast<double>(b.size()));
          decoded.push_back(baseline::jpeg_decode(b));
          psnr_total += psnr(p, decoded.back());
        }
        const double acc = classify::accuracy(*t.classifier, decoded, eval.labels);
        const double psnr_mean = psnr_total / static_cast<double>(eval_perturbed.size());
        if (sub == baseline::Subsampling::k444) {
          s.size_444 = mean_std(sizes);
          s.psnr_444 = psnr_mean;
          s.accuracy_444 = acc;
        } else {
          s.size_420 = mean_std(sizes);
          s.psnr_420 = psnr_mean;
          s.accuracy_420 = acc;
        }
      }
      report.subsampling.push_back(s);

      CompressionStudy cs;
      cs.model = t.id;
      auto png_mean = [](std::span<const Image8> images) {
        double total = 0;
        for (const auto& x : images) total += static_cast<double>(baseline::png_encode(x).size());
        return total / static_cast<double>(images.size());
      };
      auto jpeg_mean = [](std::span<const Image8> images, const baseline::JpegConfig& jc) {
        double total = 0;
        for (const auto& x : images) total += static_cast<double>(baseline::jpeg_encode(x, jc).size());
        return total / static_cast<double>(images.size());
      };
      cs.png_regular = png_mean(eval.images);
      cs.png_perturbed = png_mean(eval_perturbed);
      cs.accuracy_regular = classify::accuracy(*t.classifier, eval.images, eval.labels);
      cs.accuracy_perturbed = std::stod(c["uncompressed_perturbed_accuracy." + t.id]);
      const double val_regular = classify::accuracy(*t.classifier, halves.validation.images, halves.validation.labels);
      cs.jpeg_quality_regular = choose_edge_quality(*t.classifier, halves.validation.images, halves.validation.labels,
                                                    baseline::Subsampling::k444, val_regular - cfg.accuracy_margin)
                                    .quality;
      cs.jpeg_quality_perturbed = t.edge_jpeg.quality;
      cs.jpeg_regular = jpeg_mean(eval.images, {cs.jpeg_quality_regular, baseline::Subsampling::k444, true});
      cs.jpeg_perturbed = jpeg_mean(eval_perturbed, t.edge_jpeg);
      report.compression.push_back(cs);
    }
  }
  if (!tls_dir.empty()) fs::remove_all(tls_dir);
  report.finished = utc_timestamp();
  return report;
}

}  // namespace pmc::harness
