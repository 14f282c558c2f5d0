#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "pmc/harness/experiment.hpp"
#include "pmc/harness/training.hpp"
#include "pmc/pipeline/services.hpp"

using namespace pmc;
namespace fs = std::filesystem;

namespace {

void log_line(const std::string& s) { std::cerr << s << std::endl; }

// Blocks until SIGINT or SIGTERM. The signals are masked in main before any
// thread starts so every server thread inherits the mask.
void wait_for_shutdown() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  int sig = 0;
  sigwait(&set, &sig);
}

pipeline::TlsConfig server_tls(bool enabled, const std::string& cert, const std::string& key, const harness::ModelStore& store) {
  if (!enabled) return {};
  if (!cert.empty() || !key.empty()) {
    if (cert.empty() || key.empty()) throw ConfigError("--cert and --key go together");
    return {true, cert, key};
  }
  const auto dir = fs::path(store.dir()) / "tls";
  if (fs::exists(dir / "cert.pem") && fs::exists(dir / "key.pem")) {
    return {true, (dir / "cert.pem").string(), (dir / "key.pem").string()};
  }
  log_line("writing a self-signed certificate to " + dir.string());
  return pipeline::make_self_signed(dir.string());
}

std::string client_ca(bool tls, const std::string& ca, const harness::ModelStore& store) {
  if (!ca.empty()) return ca;
  return tls ? (fs::path(store.dir()) / "tls" / "cert.pem").string() : "";
}

harness::Split parse_split(const std::string& s) {
  if (s == "train") return harness::Split::kTrain;
  if (s == "test") return harness::Split::kTest;
  throw ConfigError("unknown split '" + s + "'");
}

}  // namespace

int main(int argc, char** argv) {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  CLI::App app{"Privacy-preserving mobile-cloud image recognition: training, services and experiments"};
  app.require_subcommand(1);
  std::string model_dir;
  app.add_option("--model-dir", model_dir, "Artifact directory (default: $PMC_MODEL_DIR or ./models)");

  std::string target = "cnn-a", aux = "cnn-b";
  int client_quality = 89;
  std::string client_subsampling = "444";

  // Per-subcommand dataset options, so each keeps its own defaults.
  struct DataOpts {
    std::string dataset = "synthetic:0";
    std::size_t images = 0;
    std::uint64_t seed = 0;
  };
  std::map<CLI::App*, DataOpts> data_opts;
  auto add_dataset = [&](CLI::App* sub, std::size_t default_images) {
    auto& d = data_opts[sub];
    d.images = default_images;
    sub->add_option("--dataset", d.dataset, "CIFAR-10 binary file or directory, or synthetic:SEED")->capture_default_str();
    sub->add_option("--images", d.images, "Number of images to use (0: all; synthetic needs a count)")->capture_default_str();
    sub->add_option("--seed", d.seed, "Random seed")->capture_default_str();
  };
  auto add_client_jpeg = [&](CLI::App* sub) {
    sub->add_option("--client-quality", client_quality, "Client JPEG quality")->capture_default_str();
    sub->add_option("--client-subsampling", client_subsampling, "Client JPEG subsampling (420|444)")->capture_default_str();
  };
  auto client_jpeg = [&] {
    baseline::JpegConfig c{client_quality, baseline::parse_subsampling(client_subsampling), true};
    c.validate();
    return c;
  };

  // train-classifier
  auto* tc = app.add_subcommand("train-classifier", "Train a classifier (cnn-a or cnn-b)");
  add_dataset(tc, harness::DeskDefaults::kClassifierImages);
  tc->add_option("--target-model", target, "Classifier id")->capture_default_str();
  std::size_t tc_epochs = harness::DeskDefaults::kClassifierEpochs;
  tc->add_option("--epochs", tc_epochs, "Training epochs")->capture_default_str();

  // train-generator
  auto* tg = app.add_subcommand("train-generator", "Train the perturbation generator for a target model");
  add_dataset(tg, harness::DeskDefaults::kGeneratorImages);
  tg->add_option("--target-model", target, "Target classifier id")->capture_default_str();
  tg->add_option("--aux-model", aux, "Auxiliary classifier id")->capture_default_str();
  std::size_t tg_epochs = harness::DeskDefaults::kGeneratorEpochs;
  tg->add_option("--epochs", tg_epochs, "Training epochs")->capture_default_str();
  double w_target = 1.0, w_aux = 0.1, w_ssim = 1.0;
  tg->add_option("--w-target", w_target, "Target cross-entropy weight")->capture_default_str();
  tg->add_option("--w-aux", w_aux, "Auxiliary cross-entropy weight")->capture_default_str();
  tg->add_option("--w-ssim", w_ssim, "SSIM weight")->capture_default_str();
  add_client_jpeg(tg);

  // train-codec
  auto* tn = app.add_subcommand("train-codec", "Train the neural codec on a target's perturbed images");
  add_dataset(tn, harness::DeskDefaults::kCodecImages);
  tn->add_option("--target-model", target, "Target classifier id")->capture_default_str();
  std::size_t tn_epochs = harness::DeskDefaults::kCodecEpochs;
  tn->add_option("--epochs", tn_epochs, "Training epochs")->capture_default_str();
  double lambda = 0.01;
  tn->add_option("--lambda", lambda, "Rate-distortion trade-off")->capture_default_str();
  std::size_t channels = codec::kDefaultLatentChannels;
  tn->add_option("--channels", channels, "Latent channels")->capture_default_str();
  add_client_jpeg(tn);

  // serve-cloud
  std::string host = "127.0.0.1";
  int port = 0;
  bool tls = false;
  std::string cert, key, ca;
  std::vector<std::string> models;
  auto* sc = app.add_subcommand("serve-cloud", "Run the cloud service (decode + classify)");
  sc->add_option("--host", host)->capture_default_str();
  sc->add_option("--port", port, "Port (0: any free port)")->capture_default_str();
  sc->add_option("--tls", tls, "Serve HTTPS")->capture_default_str();
  sc->add_option("--cert", cert, "TLS certificate (default: self-signed in <model-dir>/tls)");
  sc->add_option("--key", key, "TLS key");
  sc->add_option("--models", models, "Classifier ids to serve (default: cnn-a cnn-b if present)");
  sc->add_option("--target-model", target, "Whose neural codec to deploy")->capture_default_str();

  // serve-edge
  std::string cloud_url, codec_name = "neural", subsampling = "444";
  int edge_quality = 89;
  std::size_t replicas = 1;
  auto* se = app.add_subcommand("serve-edge", "Run the secure edge service");
  se->add_option("--host", host)->capture_default_str();
  se->add_option("--port", port)->capture_default_str();
  se->add_option("--tls", tls, "Serve HTTPS")->capture_default_str();
  se->add_option("--cert", cert);
  se->add_option("--key", key);
  se->add_option("--cloud-url", cloud_url, "Cloud service URL")->required();
  se->add_option("--ca", ca, "Certificate to trust for an https cloud");
  se->add_option("--target-model", target, "Target classifier id on the cloud")->capture_default_str();
  se->add_option("--codec", codec_name, "Edge-to-cloud codec (png|jpeg|neural)")->capture_default_str();
  se->add_option("--jpeg-quality", edge_quality, "Edge JPEG quality")->capture_default_str();
  se->add_option("--subsampling", subsampling, "Edge JPEG subsampling (420|444)")->capture_default_str();
  se->add_option("--replicas", replicas, "Sealed worker replicas")->capture_default_str();

  // client-run
  std::string edge_url, report_path, split = "test";
  bool per_image = false;
  std::size_t batch = 0;
  auto* cr = app.add_subcommand("client-run", "Send a dataset slice through a running edge");
  add_dataset(cr, 200);
  cr->add_option("--split", split, "Dataset split (train|test)")->capture_default_str();
  cr->add_option("--edge-url", edge_url, "Edge service URL")->required();
  cr->add_option("--tls", tls, "Trust the self-signed certificate in <model-dir>/tls")->capture_default_str();
  cr->add_option("--ca", ca, "Certificate to trust for an https edge");
  cr->add_option("--batch", batch, "Images per request (0: one request per image)")->capture_default_str();
  cr->add_option("--report", report_path, "Write <PATH>.csv and <PATH>.json");
  cr->add_option("--per-image", per_image, "Include per-image records in the JSON report")->capture_default_str();
  add_client_jpeg(cr);

  // experiment
  harness::ExperimentConfig ex;
  std::vector<std::string> codec_names{"png", "jpeg", "neural"};
  std::vector<std::string> ex_models{"cnn-a"};
  std::string mode = "in-process";
  int ex_quality = 0;
  auto* ep = app.add_subcommand("experiment", "Accuracy, bandwidth and timing report over the evaluation half");
  ep->add_option("--dataset", ex.dataset, "CIFAR-10 path or synthetic:SEED")->capture_default_str();
  ep->add_option("--images", ex.test_images, "Test images to load before halving (0: all)")->capture_default_str();
  ep->add_option("--target-model", ex_models, "Target model ids")->capture_default_str();
  ep->add_option("--codec", codec_names, "Edge-to-cloud codecs")->capture_default_str();
  ep->add_option("--jpeg-quality", ex_quality, "Edge JPEG quality (0: search on the validation half)")->capture_default_str();
  ep->add_option("--subsampling", subsampling, "Edge JPEG subsampling (420|444)")->capture_default_str();
  ep->add_option("--mode", mode, "in-process or services")->capture_default_str();
  ep->add_option("--tls", ex.tls, "Use HTTPS between the services")->capture_default_str();
  ep->add_option("--replicas", ex.replicas, "Sealed worker replicas")->capture_default_str();
  ep->add_option("--batch", ex.client_batch, "Client images per request")->capture_default_str();
  ep->add_option("--report", report_path, "Write <PATH>.csv and <PATH>.json")->required();
  ep->add_option("--per-image", per_image, "Include per-image records in the JSON report")->capture_default_str();
  ep->add_option("--seed", ex.seed, "Seed recorded in the report")->capture_default_str();
  add_client_jpeg(ep);

  CLI11_PARSE(app, argc, argv);

  try {
    const harness::ModelStore store(model_dir);

    if (tc->parsed()) {
      classify::ClassifierTrainConfig cfg;
      const auto& d = data_opts[tc];
      cfg.epochs = tc_epochs;
      cfg.seed = d.seed;
      const auto data = harness::load_dataset(d.dataset, harness::Split::kTrain, d.images);
      harness::train_and_save_classifier(store, target, data, cfg, log_line);
      log_line("saved " + store.classifier_path(target));
    } else if (tg->parsed()) {
      pertgen::GenTrainConfig cfg;
      cfg.target_id = target;
      cfg.aux_id = aux;
      const auto& d = data_opts[tg];
      cfg.epochs = tg_epochs;
      cfg.weights = {w_target, w_aux, w_ssim};
      cfg.seed = d.seed;
      const auto data = harness::load_dataset(d.dataset, harness::Split::kTrain, d.images);
      harness::train_and_save_generator(store, data, client_jpeg(), cfg, log_line);
      log_line("saved " + store.generator_path(target));
    } else if (tn->parsed()) {
      codec::CodecTrainConfig cfg;
      cfg.lambda = lambda;
      cfg.channels = channels;
      const auto& d = data_opts[tn];
      cfg.epochs = tn_epochs;
      cfg.seed = d.seed;
      const auto data = harness::load_dataset(d.dataset, harness::Split::kTrain, d.images);
      harness::train_and_save_codec(store, target, data, client_jpeg(), cfg, harness::DeskDefaults::kCodecValFraction,
                                    log_line);
      log_line("saved " + store.codec_path(target));
    } else if (sc->parsed()) {
      pipeline::CloudConfig cfg;
      cfg.host = host;
      cfg.port = port;
      cfg.tls = server_tls(tls, cert, key, store);
      if (models.empty()) {
        for (const auto& id : classify::Classifier::known_ids()) {
          if (fs::exists(store.classifier_path(id))) models.push_back(id);
        }
        if (models.empty()) throw ConfigError("no classifier artifacts in " + store.dir());
      }
      for (const auto& id : models) cfg.models[id] = std::make_shared<classify::Classifier>(store.load_classifier(id));
      if (fs::exists(store.codec_path(target))) {
        cfg.neural = std::make_shared<codec::FactorizedPrior>(store.load_codec(target));
      } else {
        log_line("no neural codec for " + target + "; neural payloads will be rejected");
      }
      pipeline::CloudService cloud(std::move(cfg));
      std::cout << cloud.url() << std::endl;
      wait_for_shutdown();
    } else if (se->parsed()) {
      pipeline::EdgeConfig cfg;
      cfg.host = host;
      cfg.port = port;
      cfg.tls = server_tls(tls, cert, key, store);
      cfg.cloud_url = cloud_url;
      cfg.cloud_ca_path = ca;
      cfg.model_id = target;
      cfg.codec = pipeline::parse_codec(codec_name);
      cfg.jpeg = {edge_quality, baseline::parse_subsampling(subsampling), true};
      if (cfg.codec == pipeline::CodecKind::kNeural) {
        cfg.neural = std::make_shared<codec::FactorizedPrior>(store.load_codec(target));
      }
      if (!fs::exists(store.generator_path(target))) {
        throw ConfigError("missing model artifact: generator for '" + target + "' (" + store.generator_path(target) + ")");
      }
      cfg.sealed.generator_path = store.generator_path(target);
      cfg.sealed.replicas = replicas;
      pipeline::EdgeService edge(std::move(cfg));
      std::cout << edge.url() << std::endl;
      log_line("attested generator " + to_hex(edge.executor().attest()));
      wait_for_shutdown();
    } else if (cr->parsed()) {
      const auto& d = data_opts[cr];
      const auto data = harness::load_dataset(d.dataset, parse_split(split), d.images);
      pipeline::ClientConfig cfg;
      cfg.jpeg = client_jpeg();
      cfg.ca_path = client_ca(tls, ca, store);
      cfg.batch = batch;
      cfg.run_id = "client";
      const auto run = pipeline::client_run(data.images, edge_url, cfg);
      harness::ExperimentReport report;
      report.mode = "services";
      report.dataset = d.dataset;
      report.eval_images = data.size();
      report.seed = d.seed;
      report.started = harness::utc_timestamp();
      std::vector<harness::ImageRecord> records;
      for (const auto& r : run.records) {
        harness::ImageRecord rec{"client", r.request_id, r.index, data.labels[r.index], r.label, r.ok, r.error,
                                 r.s1_bytes, r.s2_bytes, r.timings, r.end_to_end_us};
        records.push_back(std::move(rec));
      }
      auto row = harness::summarize_records(records);
      const auto it = std::find_if(run.records.begin(), run.records.end(), [](const auto& r) { return r.ok; });
      row.model = it == run.records.end() ? "" : it->model;
      row.codec = it == run.records.end() ? "" : it->codec;
      row.deployment = "edge";
      row.config = row.model + "/" + row.codec + "/edge";
      row.client_quality = cfg.jpeg.quality;
      row.client_subsampling = baseline::to_string(cfg.jpeg.subsampling);
      row.seed = d.seed;
      row.timestamp = harness::utc_timestamp();
      std::cout << "images " << row.images << ", errors " << row.errors << ", accuracy " << row.accuracy << ", S1 "
                << row.s1.mean << " +- " << row.s1.std << " B, S2 " << row.s2.mean << " +- " << row.s2.std
                << " B, end-to-end " << row.end_to_end_us << " us" << std::endl;
      report.rows.push_back(std::move(row));
      report.records = std::move(records);
      report.finished = harness::utc_timestamp();
      if (!report_path.empty()) harness::emit_report(report, report_path, per_image);
      return run.records.empty() || report.rows[0].errors == 0 ? 0 : 1;
    } else if (ep->parsed()) {
      ex.models = ex_models;
      ex.codecs.clear();
      for (const auto& c : codec_names) ex.codecs.push_back(pipeline::parse_codec(c));
      if (ex_quality > 0) ex.edge_jpeg_quality = ex_quality;
      ex.edge_subsampling = baseline::parse_subsampling(subsampling);
      ex.client_jpeg = client_jpeg();
      ex.mode = harness::parse_mode(mode);
      ex.per_image = per_image;
      ex.model_dir = store.dir();
      auto report = harness::run_experiment(ex, log_line);
      harness::emit_report(report, report_path, per_image);
      std::cout << harness::to_csv(report.rows);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
