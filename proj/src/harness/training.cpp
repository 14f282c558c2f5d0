#include "pmc/harness/training.hpp"

#include <cstdio>

namespace pmc::harness {

namespace {

void say(const Log& log, const std::string& s) {
  if (log) log(s);
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

}  // namespace

classify::Classifier train_and_save_classifier(const ModelStore& store, const std::string& id, const Dataset& train,
                                               const classify::ClassifierTrainConfig& cfg, const Log& log) {
  auto result = classify::train_classifier(id, train.images, train.labels, cfg, [&](std::size_t e, double loss, double acc) {
    say(log, id + " epoch " + std::to_string(e + 1) + ": loss " + num(loss) + ", train accuracy " + num(acc));
  });
  store.save_classifier(result.model);
  return std::move(result.model);
}

pertgen::PerturbationGenerator train_and_save_generator(const ModelStore& store, const Dataset& train,
                                                        const baseline::JpegConfig& client_jpeg,
                                                        const pertgen::GenTrainConfig& cfg, const Log& log) {
  auto target = store.load_classifier(cfg.target_id);
  auto aux = store.load_classifier(cfg.aux_id);
  const auto target_hash = target.weight_hash(), aux_hash = aux.weight_hash();
  const auto received = client_view(train.images, client_jpeg);
  auto result = pertgen::train_generator(cfg, &target, &aux, received, train.labels,
                                         [&](std::size_t e, const pertgen::LossTerms& t) {
                                           say(log, "generator epoch " + std::to_string(e + 1) + ": loss " +
                                                        num(t.total) + " (target CE " + num(t.ce_target) +
                                                        ", aux CE " + num(t.ce_aux) + ", SSIM " + num(t.ssim) + ")");
                                         });
  if (target.weight_hash() != target_hash || aux.weight_hash() != aux_hash) {
    throw ModelIntegrityError("classifier weights changed during generator training");
  }
  store.save_generator(cfg.target_id, result.generator);
  return std::move(result.generator);
}

codec::CodecTrainResult train_and_save_codec(const ModelStore& store, const std::string& target, const Dataset& train,
                                             const baseline::JpegConfig& client_jpeg,
                                             const codec::CodecTrainConfig& cfg, double val_fraction, const Log& log) {
  if (val_fraction < 0 || val_fraction >= 1) throw ConfigError("validation fraction must be in [0, 1)");
  const auto gen = store.load_generator(target);
  const auto perturbed = pertgen::generate(gen, client_view(train.images, client_jpeg));
  const auto n_val = static_cast<std::size_t>(static_cast<double>(perturbed.size()) * val_fraction);
  const std::span<const Image8> all(perturbed);
  const auto train_part = all.first(perturbed.size() - n_val);
  const auto val_part = all.last(n_val);
  auto result = codec::train_codec(train_part, val_part, cfg, [&](std::size_t e, const codec::CodecEpochStats& s) {
    say(log, "codec epoch " + std::to_string(e + 1) + ": loss " + num(s.train_loss) + ", bpp " + num(s.train_bpp) +
                 ", val loss " + num(s.val_loss) + ", val bpp " + num(s.val_bpp));
  });
  result.model.set_paired_hash(gen.attestation_hash());
  store.save_codec(target, result.model);
  return result;
}

}  // namespace pmc::harness
