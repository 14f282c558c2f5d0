#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pmc/bytes.hpp"
#include "pmc/image.hpp"
#include "pmc/nn/layers.hpp"

namespace pmc::classify {

inline constexpr std::size_t kClasses = 10;

// Two conv + 2x2 max-pool stages and two dense layers.
//   cnn-a: conv3 3->16, conv3 16->32, dense 2048->64->10
//   cnn-b: conv5 3->12, conv5 12->24, dense 1536->48->10
class Classifier {
 public:
  Classifier() = default;
  Classifier(const std::string& id, std::uint64_t seed, std::size_t classes = kClasses);
  Classifier(const Classifier&) = delete;
  Classifier& operator=(const Classifier&) = delete;
  Classifier(Classifier&&) = default;
  Classifier& operator=(Classifier&&) = default;

  static std::vector<std::string> known_ids() { return {"cnn-a", "cnn-b"}; }

  const std::string& id() const { return id_; }
  std::size_t classes() const { return classes_; }

  // x: (N, 3, 32, 32) in [0, 1] -> (N, classes).
  nn::Var<float> logits(const nn::Var<float>& x) const;

  nn::ParameterRefs parameters();

  Bytes save() const;
  static Classifier load(std::span<const std::uint8_t> bytes);
  // Truncated SHA-256 of the saved container.
  Digest8 weight_hash() const;

 private:
  std::string id_;
  std::size_t classes_ = kClasses;
  nn::Conv2d conv1_, conv2_;
  nn::Linear fc1_, fc2_;
};

struct Prediction {
  int label = 0;
  std::vector<float> logits;
};

// Lowest index wins ties.
int argmax(std::span<const float> logits);

std::vector<Prediction> predict(const Classifier& model, std::span<const Image8> images, std::size_t batch = 256);
std::vector<Prediction> predict(const Classifier& model, const nn::Tensor<float>& x, std::size_t batch = 256);
double accuracy(const Classifier& model, std::span<const Image8> images, std::span<const int> labels,
                std::size_t batch = 256);

struct ClassifierTrainConfig {
  std::size_t epochs = 10;
  double lr = 1e-3;
  std::size_t batch = 32;
  std::uint64_t seed = 0;
};

struct ClassifierTrainResult {
  Classifier model;
  std::vector<double> train_accuracy;  // per epoch, measured during the pass
  std::vector<double> train_loss;
};

ClassifierTrainResult train_classifier(const std::string& id, std::span<const Image8> images,
                                       std::span<const int> labels, const ClassifierTrainConfig& cfg,
                                       const std::function<void(std::size_t, double, double)>& on_epoch = {});

}  // namespace pmc::classify
