#pragma once

#include <string>

#include "pmc/baseline/baseline_codec.hpp"
#include "pmc/classify/classifier.hpp"
#include "pmc/codec/neural_codec.hpp"
#include "pmc/harness/dataset.hpp"
#include "pmc/pertgen/generator.hpp"

namespace pmc::harness {

// PMC_MODEL_DIR if set, else "models".
std::string default_model_dir();

// Trained artifacts on disk. The generator and codec are per target model:
// the codec is trained on (and paired with) that target's generator.
class ModelStore {
 public:
  explicit ModelStore(std::string dir = default_model_dir());

  const std::string& dir() const { return dir_; }
  std::string classifier_path(const std::string& id) const;
  std::string generator_path(const std::string& target) const;
  std::string codec_path(const std::string& target) const;

  // Missing files are a ConfigError naming the artifact.
  classify::Classifier load_classifier(const std::string& id) const;
  pertgen::PerturbationGenerator load_generator(const std::string& target) const;
  codec::FactorizedPrior load_codec(const std::string& target) const;

  void save_classifier(const classify::Classifier& c) const;
  void save_generator(const std::string& target, const pertgen::PerturbationGenerator& g) const;
  void save_codec(const std::string& target, const codec::FactorizedPrior& c) const;

 private:
  Bytes read_artifact(const std::string& path, const std::string& what) const;
  std::string dir_;
};

enum class Split { kTrain, kTest };

// "synthetic:SEED" or a CIFAR-10 binary file or directory. Synthetic train
// and test splits use different seeds. `limit` caps the image count (0: all);
// synthetic sets need a positive limit.
Dataset load_dataset(const std::string& spec, Split split, std::size_t limit);

// The images as the edge receives them: client JPEG encode then decode.
std::vector<Image8> client_view(std::span<const Image8> images, const baseline::JpegConfig& client_jpeg);

}  // namespace pmc::harness
