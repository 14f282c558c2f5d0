#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pmc/bytes.hpp"
#include "pmc/entropy/bottleneck.hpp"
#include "pmc/image.hpp"
#include "pmc/nn/layers.hpp"

namespace pmc::codec {

inline constexpr std::size_t kDefaultLatentChannels = 32;

// Analysis: 3 x (conv k5 s2 p2 -> GDN). Synthesis: deconv -> IGDN, deconv ->
// IGDN, deconv to RGB, clamp to [0, 1]. Each deconv uses output padding 1 so
// every stage exactly doubles the spatial size.
class FactorizedPrior {
 public:
  FactorizedPrior() = default;
  FactorizedPrior(std::size_t channels, std::uint64_t seed);
  FactorizedPrior(const FactorizedPrior&) = delete;
  FactorizedPrior& operator=(const FactorizedPrior&) = delete;
  FactorizedPrior(FactorizedPrior&&) = default;
  FactorizedPrior& operator=(FactorizedPrior&&) = default;

  std::size_t channels() const { return channels_; }

  nn::Var<float> analysis(const nn::Var<float>& x) const;
  // Without the final clamp.
  nn::Var<float> synthesis(const nn::Var<float>& y_hat) const;

  const entropy::EntropyBottleneck& bottleneck() const { return bottleneck_; }
  entropy::EntropyBottleneck& bottleneck() { return bottleneck_; }

  nn::ParameterRefs parameters();      // transforms + density
  nn::ParameterRefs aux_parameters();  // quantiles

  // Generator attestation hash this codec was trained for; every Bitstring
  // it produces carries it and decompress rejects any other.
  const Digest8& paired_hash() const { return paired_hash_; }
  void set_paired_hash(const Digest8& h) { paired_hash_ = h; }

  // Coding tables, rebuilt from the density on demand after training.
  void refresh_tables();
  const entropy::CdfTableSet& tables() const;

  Bytes save() const;
  static FactorizedPrior load(std::span<const std::uint8_t> bytes);

 private:
  nn::ParameterRefs all_parameters();
  nn::Tensor<float> hash_tensor() const;

  std::size_t channels_ = 0;
  nn::Conv2d conv_[3];
  nn::Gdn gdn_[3];
  nn::Deconv2d deconv_[3];
  nn::Gdn igdn_[2];
  entropy::EntropyBottleneck bottleneck_;
  Digest8 paired_hash_{};
  entropy::CdfTableSet tables_;
};

// -sum(log2 p) / num_pixels.
nn::Var<float> rate_loss(const nn::Var<float>& likelihoods, std::size_t num_pixels);

// "PMCB" | version u16 | C, H, W u16 | hash[8] | payload length u32 | payload
inline constexpr std::uint16_t kBitstringVersion = 1;
inline constexpr std::size_t kBitstringHeaderBytes = 4 + 2 + 6 + 8 + 4;

struct Bitstring {
  std::uint16_t channels = 0, height = 0, width = 0;
  Digest8 hash{};
  Bytes payload;

  Bytes serialize() const;
  // Throws FormatError on bad magic, version or length.
  static Bitstring parse(std::span<const std::uint8_t> bytes);
  std::size_t size() const { return kBitstringHeaderBytes + payload.size(); }
};

// Eval-mode latent ŷ of one image, in raster order.
std::vector<std::int32_t> quantized_latent(const FactorizedPrior& model, const Image8& x);

Bitstring compress(const FactorizedPrior& model, const Image8& x);
// Throws CodecVersionError on a hash mismatch and DecodeError on a bad payload.
std::vector<std::int32_t> decode_latent(const FactorizedPrior& model, const Bitstring& b);
nn::Tensor<float> decompress_tensor(const FactorizedPrior& model, const Bitstring& b);
Image8 decompress(const FactorizedPrior& model, const Bitstring& b);

// Model-estimated bits of the eval-mode latent.
double estimated_bits(const FactorizedPrior& model, const Image8& x);

struct CodecTrainConfig {
  double lambda = 0.01;
  double main_lr = 1e-4;
  double aux_lr = 1e-3;
  std::size_t batch = 16;
  std::size_t epochs = 100;
  double clip_norm = 1.0;
  std::size_t eval_batch = 256;
  std::size_t channels = kDefaultLatentChannels;
  int plateau_patience = 10;
  double plateau_factor = 0.1;
  std::uint64_t seed = 0;
};

struct CodecEpochStats {
  double train_loss = 0, train_bpp = 0, train_mse = 0;
  double val_loss = 0, val_bpp = 0, val_mse = 0;
  double lr = 0;
  double aux_loss = 0;
};

struct CodecTrainResult {
  FactorizedPrior model;
  std::vector<CodecEpochStats> epochs;
  std::size_t best_epoch = 0;
};

struct RdStats {
  double loss = 0, bpp = 0, mse = 0;
};

// Eval-mode (rounded latent) rate-distortion over a set of images.
RdStats evaluate_rd(const FactorizedPrior& model, std::span<const Image8> images, double lambda,
                    std::size_t batch = 256);

// Empty val set: the training images double as validation.
CodecTrainResult train_codec(std::span<const Image8> train, std::span<const Image8> val, const CodecTrainConfig& cfg,
                             const std::function<void(std::size_t, const CodecEpochStats&)>& on_epoch = {});

}  // namespace pmc::codec
