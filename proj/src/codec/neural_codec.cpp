#include "pmc/codec/neural_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pmc/nn/container.hpp"
#include "pmc/nn/losses.hpp"
#include "pmc/nn/ops.hpp"
#include "pmc/rangecoder/range_coder.hpp"

namespace pmc::codec {

using nn::Tensor;
using nn::Var;

namespace {

constexpr std::string_view kMagic = "PMCB";
constexpr const char* kHashTensor = "pairing.generator_hash";

Var<float> reconstruct(const FactorizedPrior& model, const Var<float>& y_hat, bool straight_through) {
  auto x = model.synthesis(y_hat);
  if (straight_through) return nn::clamp_straight_through(x, 0.0f, 1.0f);
  Tensor<float> out = x.value();
  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return nn::constant(std::move(out));
}

std::size_t num_pixels(const Var<float>& x) { return x.shape()[0] * x.shape()[2] * x.shape()[3]; }

}  // namespace

FactorizedPrior::FactorizedPrior(std::size_t channels, std::uint64_t seed) : channels_(channels) {
  if (channels == 0) throw ConfigError("codec needs at least one latent channel");
  std::mt19937_64 rng(seed);
  const std::size_t in[3] = {3, channels, channels};
  for (int i = 0; i < 3; ++i) {
    const std::string idx = std::to_string(i);
    conv_[i] = nn::Conv2d("analysis.conv" + idx, in[i], channels, 5, 2, 2, rng, nn::Init::kLinear);
    gdn_[i] = nn::Gdn("analysis.gdn" + idx, channels, false);
  }
  const std::size_t out[3] = {channels, channels, 3};
  for (int i = 0; i < 3; ++i) {
    const std::string idx = std::to_string(i);
    deconv_[i] = nn::Deconv2d("synthesis.deconv" + idx, channels, out[i], 5, 2, 2, 1, rng, nn::Init::kLinear);
    if (i < 2) igdn_[i] = nn::Gdn("synthesis.igdn" + idx, channels, true);
  }
  bottleneck_ = entropy::EntropyBottleneck(channels, 10.0, rng, "entropy_bottleneck");
}

Var<float> FactorizedPrior::analysis(const Var<float>& x) const {
  if (x.value().rank() != 4 || x.shape()[1] != 3) {
    throw DimensionError("codec analysis expects (N, 3, H, W), got " + nn::to_string(x.shape()));
  }
  Var<float> h = x;
  for (int i = 0; i < 3; ++i) h = gdn_[i](conv_[i](h));
  return h;
}

Var<float> FactorizedPrior::synthesis(const Var<float>& y_hat) const {
  Var<float> h = y_hat;
  for (int i = 0; i < 3; ++i) {
    h = deconv_[i](h);
    if (i < 2) h = igdn_[i](h);
  }
  return h;
}

nn::ParameterRefs FactorizedPrior::parameters() {
  nn::ParameterRefs refs;
  for (int i = 0; i < 3; ++i) {
    conv_[i].collect(refs);
    gdn_[i].collect(refs);
  }
  for (int i = 0; i < 3; ++i) {
    deconv_[i].collect(refs);
    if (i < 2) igdn_[i].collect(refs);
  }
  auto eb = bottleneck_.parameters();
  refs.insert(refs.end(), eb.begin(), eb.end());
  return refs;
}

nn::ParameterRefs FactorizedPrior::aux_parameters() { return bottleneck_.aux_parameters(); }

nn::ParameterRefs FactorizedPrior::all_parameters() {
  auto refs = parameters();
  auto aux = aux_parameters();
  refs.insert(refs.end(), aux.begin(), aux.end());
  return refs;
}

void FactorizedPrior::refresh_tables() { tables_ = bottleneck_.build_cdf_tables(); }

const entropy::CdfTableSet& FactorizedPrior::tables() const {
  if (tables_.size() != channels_) throw StateError("codec tables not built; call refresh_tables()");
  return tables_;
}

Tensor<float> FactorizedPrior::hash_tensor() const {
  Tensor<float> t({8});
  for (std::size_t i = 0; i < 8; ++i) t.data[i] = paired_hash_[i];
  return t;
}

Bytes FactorizedPrior::save() const {
  auto& self = const_cast<FactorizedPrior&>(*this);
  std::vector<nn::NamedTensor> tensors;
  tensors.push_back({"codec.channels", Tensor<float>({1}, static_cast<float>(channels_))});
  tensors.push_back({kHashTensor, hash_tensor()});
  for (const nn::Parameter* p : self.all_parameters()) tensors.push_back({p->name, p->value()});
  return nn::write_container(tensors);
}

FactorizedPrior FactorizedPrior::load(std::span<const std::uint8_t> bytes) {
  const auto tensors = nn::read_container(bytes);
  auto find = [&](const std::string& name) -> const Tensor<float>& {
    for (const auto& t : tensors)
      if (t.name == name) return t.tensor;
    throw FormatError("codec container is missing '" + name + "'");
  };
  const auto& ch = find("codec.channels");
  if (ch.size() != 1 || !(ch.data[0] >= 1)) throw FormatError("codec container has an invalid channel count");
  FactorizedPrior model(static_cast<std::size_t>(ch.data[0]), 0);
  nn::load_parameters(model.all_parameters(), bytes);
  const auto& h = find(kHashTensor);
  if (h.size() != 8) throw FormatError("codec pairing hash must hold 8 bytes");
  for (std::size_t i = 0; i < 8; ++i) model.paired_hash_[i] = static_cast<std::uint8_t>(h.data[i]);
  model.refresh_tables();
  return model;
}

Var<float> rate_loss(const Var<float>& likelihoods, std::size_t num_pixels) {
  if (num_pixels == 0) throw ConfigError("rate_loss: num_pixels must be positive");
  const float k = static_cast<float>(-1.0 / (std::log(2.0) * static_cast<double>(num_pixels)));
  return nn::scale(nn::sum(nn::log(likelihoods)), k);
}

Bytes Bitstring::serialize() const {
  ByteWriter w;
  w.raw(kMagic);
  w.u16(kBitstringVersion);
  w.u16(channels);
  w.u16(height);
  w.u16(width);
  w.raw(hash);
  if (payload.size() > UINT32_MAX) throw FormatError("payload too large");
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.raw(payload);
  return w.take();
}

Bitstring Bitstring::parse(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  auto magic = r.raw(4);
  if (std::string_view(reinterpret_cast<const char*>(magic.data()), 4) != kMagic) {
    throw FormatError("not a PMCB bitstring (bad magic)");
  }
  const auto version = r.u16();
  if (version != kBitstringVersion) throw FormatError("unsupported bitstring version " + std::to_string(version));
  Bitstring b;
  b.channels = r.u16();
  b.height = r.u16();
  b.width = r.u16();
  auto h = r.raw(8);
  std::copy(h.begin(), h.end(), b.hash.begin());
  const auto len = r.u32();
  if (len != r.remaining()) {
    throw FormatError("bitstring payload length " + std::to_string(len) + " does not match the " +
                      std::to_string(r.remaining()) + " bytes present");
  }
  auto payload = r.raw(len);
  b.payload.assign(payload.begin(), payload.end());
  return b;
}

std::vector<std::int32_t> quantized_latent(const FactorizedPrior& model, const Image8& x) {
  nn::NoGradGuard guard;
  auto y = model.analysis(nn::constant(to_tensor(x)));
  auto q = entropy::quantize(y, entropy::QuantizeMode::kEval);
  std::vector<std::int32_t> out(q.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<std::int32_t>(q.value().data[i]);
  return out;
}

Bitstring compress(const FactorizedPrior& model, const Image8& x) {
  if (x.height % 8 != 0 || x.width % 8 != 0) {
    throw DimensionError("codec input must be a multiple of 8 pixels, got " + std::to_string(x.height) + "x" +
                         std::to_string(x.width));
  }
  Bitstring b;
  b.channels = static_cast<std::uint16_t>(model.channels());
  b.height = static_cast<std::uint16_t>(x.height / 8);
  b.width = static_cast<std::uint16_t>(x.width / 8);
  b.hash = model.paired_hash();
  const auto latent = quantized_latent(model, x);
  b.payload = rangecoder::encode(rangecoder::raster_stream(latent, b.channels, b.height, b.width), model.tables());
  return b;
}

std::vector<std::int32_t> decode_latent(const FactorizedPrior& model, const Bitstring& b) {
  if (b.hash != model.paired_hash()) {
    throw CodecVersionError("bitstring hash " + to_hex(b.hash) + " does not match the deployed codec (" +
                            to_hex(model.paired_hash()) + ")");
  }
  if (b.channels != model.channels()) {
    throw CodecVersionError("bitstring has " + std::to_string(b.channels) + " latent channels, codec has " +
                            std::to_string(model.channels()));
  }
  if (b.height == 0 || b.width == 0) throw FormatError("bitstring has an empty latent");
  return rangecoder::decode(b.payload, model.tables(), rangecoder::raster_channels(b.channels, b.height, b.width));
}

Tensor<float> decompress_tensor(const FactorizedPrior& model, const Bitstring& b) {
  const auto latent = decode_latent(model, b);
  Tensor<float> y({1, b.channels, b.height, b.width});
  for (std::size_t i = 0; i < latent.size(); ++i) y.data[i] = static_cast<float>(latent[i]);
  nn::NoGradGuard guard;
  return reconstruct(model, nn::constant(std::move(y)), false).value();
}

Image8 decompress(const FactorizedPrior& model, const Bitstring& b) {
  return std::move(from_tensor(decompress_tensor(model, b))[0]);
}

double estimated_bits(const FactorizedPrior& model, const Image8& x) {
  nn::NoGradGuard guard;
  auto y = model.analysis(nn::constant(to_tensor(x)));
  auto lik = model.bottleneck().likelihood(entropy::quantize(y, entropy::QuantizeMode::kEval));
  double bits = 0.0;
  for (float p : lik.value().data) bits -= std::log2(static_cast<double>(p));
  return bits;
}

RdStats evaluate_rd(const FactorizedPrior& model, std::span<const Image8> images, double lambda, std::size_t batch) {
  nn::NoGradGuard guard;
  RdStats s;
  if (images.empty()) return s;
  double bits = 0.0, se = 0.0, pixels = 0.0, values = 0.0;
  for (std::size_t start = 0; start < images.size(); start += batch) {
    const auto chunk = images.subspan(start, std::min(batch, images.size() - start));
    auto x = nn::constant(to_tensor(chunk));
    auto q = entropy::quantize(model.analysis(x), entropy::QuantizeMode::kEval);
    const auto lik = model.bottleneck().likelihood(q);
    for (float p : lik.value().data) bits -= std::log2(static_cast<double>(p));
    auto x_hat = reconstruct(model, q, false);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double d = static_cast<double>(x.value().data[i]) - x_hat.value().data[i];
      se += d * d;
    }
    pixels += static_cast<double>(num_pixels(x));
    values += static_cast<double>(x.size());
  }
  s.bpp = bits / pixels;
  s.mse = se / values;
  s.loss = s.bpp + lambda * 255.0 * 255.0 * s.mse;
  return s;
}

CodecTrainResult train_codec(std::span<const Image8> train, std::span<const Image8> val, const CodecTrainConfig& cfg,
                             const std::function<void(std::size_t, const CodecEpochStats&)>& on_epoch) {
  if (train.empty()) throw ConfigError("train_codec: empty dataset");
  if (cfg.batch == 0 || cfg.epochs == 0) throw ConfigError("train_codec: batch and epochs must be positive");
  if (val.empty()) val = train;

  CodecTrainResult result;
  result.model = FactorizedPrior(cfg.channels, cfg.seed);
  FactorizedPrior& model = result.model;
  auto main_params = model.parameters();
  auto aux_params = model.aux_parameters();
  nn::TrainSchedule sched{.base_lr = cfg.main_lr, .factor = cfg.plateau_factor, .patience = cfg.plateau_patience};
  std::mt19937_64 rng(cfg.seed ^ 0x5eedc0dec0ffeeULL);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  Bytes best_bytes;
  const float rd_scale = static_cast<float>(cfg.lambda * 255.0 * 255.0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    CodecEpochStats st;
    st.lr = sched.lr();
    double weight = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t n = std::min(cfg.batch, order.size() - start);
      std::vector<Image8> batch;
      batch.reserve(n);
      for (std::size_t i = 0; i < n; ++i) batch.push_back(train[order[start + i]]);
      auto x = nn::constant(to_tensor(batch));

      nn::zero_grad(main_params);
      auto y = model.analysis(x);
      auto y_tilde = entropy::quantize(y, entropy::QuantizeMode::kTrain, &rng);
      auto bpp = rate_loss(model.bottleneck().likelihood(y_tilde), num_pixels(x));
      auto x_hat = reconstruct(model, y_tilde, true);
      auto mse = nn::mse(x, x_hat);
      auto loss = nn::add(bpp, nn::scale(mse, rd_scale));
      if (!std::isfinite(loss.item())) {
        throw NumericError("codec training diverged at epoch " + std::to_string(epoch) + " (bpp " +
                           std::to_string(bpp.item()) + ", mse " + std::to_string(mse.item()) + ")");
      }
      nn::backward(loss);
      nn::clip_global_norm(main_params, cfg.clip_norm);
      nn::adam_step(main_params, static_cast<float>(sched.lr()));

      nn::zero_grad(aux_params);
      auto aux = model.bottleneck().aux_loss();
      nn::backward(aux);
      nn::adam_step(aux_params, static_cast<float>(cfg.aux_lr));

      const double w = static_cast<double>(n);
      st.train_loss += loss.item() * w;
      st.train_bpp += bpp.item() * w;
      st.train_mse += mse.item() * w;
      st.aux_loss += aux.item() * w;
      weight += w;
    }
    st.train_loss /= weight;
    st.train_bpp /= weight;
    st.train_mse /= weight;
    st.aux_loss /= weight;

    const auto v = evaluate_rd(model, val, cfg.lambda, cfg.eval_batch);
    st.val_loss = v.loss;
    st.val_bpp = v.bpp;
    st.val_mse = v.mse;
    if (v.loss < best) {
      best = v.loss;
      best_bytes = model.save();
      result.best_epoch = epoch;
    }
    nn::plateau_step(sched, v.loss);
    result.epochs.push_back(st);
    if (on_epoch) on_epoch(epoch, st);
  }
  const Digest8 pairing = model.paired_hash();
  result.model = FactorizedPrior::load(best_bytes);
  result.model.set_paired_hash(pairing);
  return result;
}

}  // namespace pmc::codec
