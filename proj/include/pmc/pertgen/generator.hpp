#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pmc/bytes.hpp"
#include "pmc/classify/classifier.hpp"
#include "pmc/image.hpp"
#include "pmc/nn/layers.hpp"

namespace pmc::pertgen {

struct LossWeights {
  double target = 1.0;  // w1
  double aux = 0.1;     // w2
  double ssim = 1.0;    // w3
};

// Desk U-Net, base width b:
//   e1 = relu(conv3 3->b)                    32x32
//   e2 = relu(conv3 s2 b->2b)                16x16
//   m  = relu(conv3 s2 2b->4b)               8x8
//   u2 = relu(conv3 [deconv2 s2 4b->2b, e2] -> 2b)
//   u1 = relu(conv3 [deconv2 s2 2b->b, e1] -> b)
//   out = sigmoid(conv1 b->3)
class PerturbationGenerator {
 public:
  PerturbationGenerator() = default;
  explicit PerturbationGenerator(std::uint64_t seed, std::size_t base_width = 16, LossWeights weights = {});
  PerturbationGenerator(const PerturbationGenerator&) = delete;
  PerturbationGenerator& operator=(const PerturbationGenerator&) = delete;
  PerturbationGenerator(PerturbationGenerator&&) = default;
  PerturbationGenerator& operator=(PerturbationGenerator&&) = default;

  nn::Var<float> forward(const nn::Var<float>& x) const;
  nn::ParameterRefs parameters();

  const LossWeights& weights() const { return weights_; }
  void set_weights(const LossWeights& w) { weights_ = w; }
  std::size_t base_width() const { return base_width_; }

  Bytes save() const;
  static PerturbationGenerator load(std::span<const std::uint8_t> bytes);
  // First 8 bytes of SHA-256 over the saved "PMCC" bytes.
  Digest8 attestation_hash() const;

 private:
  std::size_t base_width_ = 16;
  LossWeights weights_;
  nn::Conv2d e1_, e2_, mid_, u2_, u1_, out_;
  nn::Deconv2d up2_, up1_;
};

// Float output in (0, 1).
nn::Tensor<float> generate(const PerturbationGenerator& gen, const nn::Tensor<float>& x, std::size_t batch = 256);
// 8-bit output, as it leaves the sealed boundary.
std::vector<Image8> generate(const PerturbationGenerator& gen, std::span<const Image8> images,
                             std::size_t batch = 256);
Image8 generate(const PerturbationGenerator& gen, const Image8& image);

struct LossTerms {
  double total = 0, ce_target = 0, ce_aux = 0, ssim = 0;
};

// w1 * CE(target(x'), y) - w2 * CE(aux(x'), y) + w3 * SSIM(x, x').
nn::Var<float> generator_loss(const classify::Classifier& target, const classify::Classifier& aux,
                              const nn::Var<float>& x, const nn::Var<float>& x_prime, std::span<const int> labels,
                              const LossWeights& w, LossTerms* terms = nullptr);

struct GenTrainConfig {
  std::string target_id = "cnn-a";
  std::string aux_id = "cnn-b";
  LossWeights weights;
  std::size_t epochs = 5;
  std::size_t batch = 32;
  double lr = 1e-3;
  std::size_t base_width = 16;
  std::uint64_t seed = 0;
};

struct GenTrainResult {
  PerturbationGenerator generator;
  std::vector<LossTerms> epochs;  // per-epoch means
};

// Classifiers are frozen for the duration and restored afterwards.
GenTrainResult train_generator(const GenTrainConfig& cfg, classify::Classifier* target, classify::Classifier* aux,
                               std::span<const Image8> images, std::span<const int> labels,
                               const std::function<void(std::size_t, const LossTerms&)>& on_epoch = {});

}  // namespace pmc::pertgen
