#include "pmc/pertgen/generator.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "pmc/nn/container.hpp"
#include "pmc/nn/losses.hpp"

namespace pmc::pertgen {

using nn::Tensor;
using nn::Var;

PerturbationGenerator::PerturbationGenerator(std::uint64_t seed, std::size_t b, LossWeights weights)
    : base_width_(b), weights_(weights) {
  if (b == 0) throw ConfigError("generator base width must be positive");
  std::mt19937_64 rng(seed);
  e1_ = nn::Conv2d("enc1", 3, b, 3, 1, 1, rng);
  e2_ = nn::Conv2d("enc2", b, 2 * b, 3, 2, 1, rng);
  mid_ = nn::Conv2d("mid", 2 * b, 4 * b, 3, 2, 1, rng);
  up2_ = nn::Deconv2d("up2", 4 * b, 2 * b, 2, 2, 0, 0, rng);
  u2_ = nn::Conv2d("dec2", 4 * b, 2 * b, 3, 1, 1, rng);
  up1_ = nn::Deconv2d("up1", 2 * b, b, 2, 2, 0, 0, rng);
  u1_ = nn::Conv2d("dec1", 2 * b, b, 3, 1, 1, rng);
  out_ = nn::Conv2d("out", b, 3, 1, 1, 0, rng, nn::Init::kLinear);
}

Var<float> PerturbationGenerator::forward(const Var<float>& x) const {
  if (x.value().rank() != 4 || x.shape()[1] != 3 || x.shape()[2] % 4 != 0 || x.shape()[3] % 4 != 0) {
    throw DimensionError("generator expects (N, 3, H, W) with H, W divisible by 4, got " + nn::to_string(x.shape()));
  }
  auto a1 = nn::relu(e1_(x));
  auto a2 = nn::relu(e2_(a1));
  auto m = nn::relu(mid_(a2));
  auto d2 = nn::relu(u2_(nn::concat_channels(up2_(m), a2)));
  auto d1 = nn::relu(u1_(nn::concat_channels(up1_(d2), a1)));
  return nn::sigmoid(out_(d1));
}

nn::ParameterRefs PerturbationGenerator::parameters() {
  nn::ParameterRefs refs;
  for (auto* c : {&e1_, &e2_, &mid_}) c->collect(refs);
  up2_.collect(refs);
  u2_.collect(refs);
  up1_.collect(refs);
  u1_.collect(refs);
  out_.collect(refs);
  return refs;
}

Bytes PerturbationGenerator::save() const {
  auto& self = const_cast<PerturbationGenerator&>(*this);
  std::vector<nn::NamedTensor> tensors;
  tensors.push_back({"generator.base_width", Tensor<float>({1}, static_cast<float>(base_width_))});
  tensors.push_back({"generator.loss_weights",
                     Tensor<float>({3}, std::vector<float>{static_cast<float>(weights_.target),
                                                           static_cast<float>(weights_.aux),
                                                           static_cast<float>(weights_.ssim)})});
  for (const nn::Parameter* p : self.parameters()) tensors.push_back({p->name, p->value()});
  return nn::write_container(tensors);
}

PerturbationGenerator PerturbationGenerator::load(std::span<const std::uint8_t> bytes) {
  const auto tensors = nn::read_container(bytes);
  std::size_t width = 0;
  LossWeights w;
  for (const auto& t : tensors) {
    if (t.name == "generator.base_width" && t.tensor.size() == 1) width = static_cast<std::size_t>(t.tensor.data[0]);
    if (t.name == "generator.loss_weights" && t.tensor.size() == 3) {
      w = {t.tensor.data[0], t.tensor.data[1], t.tensor.data[2]};
    }
  }
  if (width == 0) throw FormatError("generator container is missing its base width");
  PerturbationGenerator gen(0, width, w);
  nn::load_parameters(gen.parameters(), bytes);
  return gen;
}

Digest8 PerturbationGenerator::attestation_hash() const { return truncated_sha256(save()); }

Tensor<float> generate(const PerturbationGenerator& gen, const Tensor<float>& x, std::size_t batch) {
  nn::NoGradGuard guard;
  if (x.rank() != 4) throw DimensionError("generate expects (N, 3, H, W), got " + nn::to_string(x.shape));
  const std::size_t n = x.shape[0], per = n ? x.size() / n : 0;
  Tensor<float> out(x.shape);
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t m = std::min(batch, n - start);
    Tensor<float> chunk({m, x.shape[1], x.shape[2], x.shape[3]});
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(start * per), m * per, chunk.data.begin());
    const auto y = gen.forward(nn::constant(std::move(chunk)));
    std::copy(y.value().data.begin(), y.value().data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(start * per));
  }
  return out;
}

std::vector<Image8> generate(const PerturbationGenerator& gen, std::span<const Image8> images, std::size_t batch) {
  std::vector<Image8> out;
  out.reserve(images.size());
  for (std::size_t start = 0; start < images.size(); start += batch) {
    auto part = from_tensor(generate(gen, to_tensor(images.subspan(start, std::min(batch, images.size() - start))), batch));
    for (auto& img : part) out.push_back(std::move(img));
  }
  return out;
}

Image8 generate(const PerturbationGenerator& gen, const Image8& image) {
  return std::move(generate(gen, std::span<const Image8>(&image, 1))[0]);
}

Var<float> generator_loss(const classify::Classifier& target, const classify::Classifier& aux, const Var<float>& x,
                          const Var<float>& x_prime, std::span<const int> labels, const LossWeights& w,
                          LossTerms* terms) {
  auto ce_t = nn::cross_entropy(target.logits(x_prime), labels);
  auto ce_a = nn::cross_entropy(aux.logits(x_prime), labels);
  auto sim = nn::ssim(x, x_prime);
  auto loss = nn::add(nn::sub(nn::scale(ce_t, static_cast<float>(w.target)), nn::scale(ce_a, static_cast<float>(w.aux))),
                      nn::scale(sim, static_cast<float>(w.ssim)));
  if (terms) *terms = {loss.item(), ce_t.item(), ce_a.item(), sim.item()};
  return loss;
}

GenTrainResult train_generator(const GenTrainConfig& cfg, classify::Classifier* target, classify::Classifier* aux,
                               std::span<const Image8> images, std::span<const int> labels,
                               const std::function<void(std::size_t, const LossTerms&)>& on_epoch) {
  if (!target || !aux) throw ConfigError("train_generator needs trained target and auxiliary classifiers");
  if (target->id() != cfg.target_id || aux->id() != cfg.aux_id) {
    throw ConfigError("classifier ids do not match the generator config (" + cfg.target_id + ", " + cfg.aux_id + ")");
  }
  if (cfg.target_id == cfg.aux_id) throw ConfigError("target and auxiliary models must differ");
  if (images.empty() || images.size() != labels.size()) throw ConfigError("train_generator: bad dataset");

  GenTrainResult result;
  result.generator = PerturbationGenerator(cfg.seed, cfg.base_width, cfg.weights);
  auto params = result.generator.parameters();
  const auto frozen_t = target->parameters(), frozen_a = aux->parameters();
  nn::set_trainable(frozen_t, false);
  nn::set_trainable(frozen_a, false);
  struct Restore {
    nn::ParameterRefs a, b;
    ~Restore() {
      nn::set_trainable(a, true);
      nn::set_trainable(b, true);
    }
  } restore{frozen_t, frozen_a};

  std::mt19937_64 rng(cfg.seed ^ 0x9e7ULL);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    LossTerms mean;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t m = std::min(cfg.batch, order.size() - start);
      std::vector<Image8> batch;
      std::vector<int> y;
      for (std::size_t i = 0; i < m; ++i) {
        batch.push_back(images[order[start + i]]);
        y.push_back(labels[order[start + i]]);
      }
      auto x = nn::constant(to_tensor(batch));
      nn::zero_grad(params);
      LossTerms t;
      auto loss = generator_loss(*target, *aux, x, result.generator.forward(x), y, cfg.weights, &t);
      if (!std::isfinite(t.total)) throw NumericError("generator training diverged at epoch " + std::to_string(epoch));
      nn::backward(loss);
      nn::adam_step(params, static_cast<float>(cfg.lr));
      const double wgt = static_cast<double>(m) / static_cast<double>(images.size());
      mean.total += t.total * wgt;
      mean.ce_target += t.ce_target * wgt;
      mean.ce_aux += t.ce_aux * wgt;
      mean.ssim += t.ssim * wgt;
    }
    result.epochs.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  return result;
}

}  // namespace pmc::pertgen
