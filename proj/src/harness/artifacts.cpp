#include "pmc/harness/artifacts.hpp"

#include <cstdlib>
#include <filesystem>

namespace pmc::harness {

namespace fs = std::filesystem;

namespace {
// Offset between the synthetic train and test seeds, so the splits never share images.
constexpr std::uint64_t kTestSeedOffset = 1'000'003;
}  // namespace

std::string default_model_dir() {
  const char* env = std::getenv("PMC_MODEL_DIR");
  return env && *env ? env : "models";
}

ModelStore::ModelStore(std::string dir) : dir_(std::move(dir)) {
  if (dir_.empty()) dir_ = default_model_dir();
}

std::string ModelStore::classifier_path(const std::string& id) const {
  return (fs::path(dir_) / ("classifier-" + id + ".pmcc")).string();
}
std::string ModelStore::generator_path(const std::string& target) const {
  return (fs::path(dir_) / ("generator-" + target + ".pmcc")).string();
}
std::string ModelStore::codec_path(const std::string& target) const {
  return (fs::path(dir_) / ("codec-" + target + ".pmcc")).string();
}

Bytes ModelStore::read_artifact(const std::string& path, const std::string& what) const {
  if (!fs::exists(path)) throw ConfigError("missing model artifact: " + what + " (" + path + ")");
  return read_file(path);
}

classify::Classifier ModelStore::load_classifier(const std::string& id) const {
  return classify::Classifier::load(read_artifact(classifier_path(id), "classifier '" + id + "'"));
}

pertgen::PerturbationGenerator ModelStore::load_generator(const std::string& target) const {
  return pertgen::PerturbationGenerator::load(read_artifact(generator_path(target), "generator for '" + target + "'"));
}

codec::FactorizedPrior ModelStore::load_codec(const std::string& target) const {
  return codec::FactorizedPrior::load(read_artifact(codec_path(target), "neural codec for '" + target + "'"));
}

void ModelStore::save_classifier(const classify::Classifier& c) const {
  fs::create_directories(dir_);
  write_file(classifier_path(c.id()), c.save());
}
void ModelStore::save_generator(const std::string& target, const pertgen::PerturbationGenerator& g) const {
  fs::create_directories(dir_);
  write_file(generator_path(target), g.save());
}
void ModelStore::save_codec(const std::string& target, const codec::FactorizedPrior& c) const {
  fs::create_directories(dir_);
  write_file(codec_path(target), c.save());
}

Dataset load_dataset(const std::string& spec, Split split, std::size_t limit) {
  constexpr std::string_view kSynthetic = "synthetic:";
  if (spec.rfind(kSynthetic, 0) == 0) {
    std::uint64_t seed = 0;
    try {
      std::size_t used = 0;
      seed = std::stoull(spec.substr(kSynthetic.size()), &used);
      if (used != spec.size() - kSynthetic.size()) throw std::invalid_argument(spec);
    } catch (const std::exception&) {
      throw ConfigError("bad synthetic dataset spec '" + spec + "' (expected synthetic:SEED)");
    }
    if (limit == 0) throw ConfigError("a synthetic dataset needs an image count");
    return make_synthetic(limit, 10, split == Split::kTrain ? seed : seed + kTestSeedOffset);
  }
  if (!fs::exists(spec)) throw ConfigError("dataset '" + spec + "' does not exist");
  Dataset d = load_cifar10(spec, split == Split::kTest);
  return limit == 0 ? d : d.slice(0, limit);
}

std::vector<Image8> client_view(std::span<const Image8> images, const baseline::JpegConfig& client_jpeg) {
  std::vector<Image8> out;
  out.reserve(images.size());
  for (const auto& x : images) out.push_back(baseline::jpeg_decode(baseline::jpeg_encode(x, client_jpeg)));
  return out;
}

}  // namespace pmc::harness
