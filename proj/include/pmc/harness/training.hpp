#pragma once

#include <functional>

#include "pmc/harness/artifacts.hpp"

namespace pmc::harness {

using Log = std::function<void(const std::string&)>;

// Desk-scale defaults shared by the CLI and the acceptance run.
struct DeskDefaults {
  static constexpr std::size_t kClassifierImages = 4000;
  static constexpr std::size_t kClassifierEpochs = 5;
  static constexpr std::size_t kGeneratorImages = 2000;
  static constexpr std::size_t kGeneratorEpochs = 3;
  static constexpr std::size_t kCodecImages = 2000;
  static constexpr std::size_t kCodecEpochs = 20;
  static constexpr double kCodecValFraction = 0.1;
};

classify::Classifier train_and_save_classifier(const ModelStore& store, const std::string& id, const Dataset& train,
                                               const classify::ClassifierTrainConfig& cfg, const Log& log = {});

// Trains on the client view of `train` (what the edge actually receives),
// with both classifiers loaded from the store. Throws ModelIntegrityError if
// either classifier's weights changed during training.
pertgen::PerturbationGenerator train_and_save_generator(const ModelStore& store, const Dataset& train,
                                                        const baseline::JpegConfig& client_jpeg,
                                                        const pertgen::GenTrainConfig& cfg, const Log& log = {});

// Trains on perturbed client views from the target's stored generator and
// pairs the codec with that generator's attestation hash. The last
// `val_fraction` of the images is held out for checkpoint selection.
codec::CodecTrainResult train_and_save_codec(const ModelStore& store, const std::string& target, const Dataset& train,
                                             const baseline::JpegConfig& client_jpeg,
                                             const codec::CodecTrainConfig& cfg,
                                             double val_fraction = DeskDefaults::kCodecValFraction,
                                             const Log& log = {});

}  // namespace pmc::harness
