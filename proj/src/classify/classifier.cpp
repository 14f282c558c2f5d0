#include "pmc/classify/classifier.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "pmc/nn/container.hpp"
#include "pmc/nn/losses.hpp"

namespace pmc::classify {

using nn::Tensor;
using nn::Var;

namespace {

struct Arch {
  std::size_t kernel, c1, c2, hidden;
};

Arch arch_for(const std::string& id) {
  if (id == "cnn-a") return {3, 16, 32, 64};
  if (id == "cnn-b") return {5, 12, 24, 48};
  throw NotFoundError("unknown classifier id '" + id + "'");
}

Tensor<float> id_tensor(const std::string& id) {
  Tensor<float> t({id.size()});
  for (std::size_t i = 0; i < id.size(); ++i) t.data[i] = static_cast<unsigned char>(id[i]);
  return t;
}

}  // namespace

Classifier::Classifier(const std::string& id, std::uint64_t seed, std::size_t classes) : id_(id), classes_(classes) {
  const Arch a = arch_for(id);
  std::mt19937_64 rng(seed);
  const std::size_t pad = a.kernel / 2;
  conv1_ = nn::Conv2d("conv1", 3, a.c1, a.kernel, 1, pad, rng);
  conv2_ = nn::Conv2d("conv2", a.c1, a.c2, a.kernel, 1, pad, rng);
  fc1_ = nn::Linear("fc1", a.c2 * 8 * 8, a.hidden, rng);
  fc2_ = nn::Linear("fc2", a.hidden, classes, rng, nn::Init::kLinear);
}

Var<float> Classifier::logits(const Var<float>& x) const {
  if (x.value().rank() != 4 || x.shape()[1] != 3 || x.shape()[2] != 32 || x.shape()[3] != 32) {
    throw DimensionError("classifier expects (N, 3, 32, 32), got " + nn::to_string(x.shape()));
  }
  auto h = nn::maxpool2d(nn::relu(conv1_(x)));
  h = nn::maxpool2d(nn::relu(conv2_(h)));
  h = nn::reshape(h, {x.shape()[0], h.size() / x.shape()[0]});
  return fc2_(nn::relu(fc1_(h)));
}

nn::ParameterRefs Classifier::parameters() {
  nn::ParameterRefs refs;
  conv1_.collect(refs);
  conv2_.collect(refs);
  fc1_.collect(refs);
  fc2_.collect(refs);
  return refs;
}

Bytes Classifier::save() const {
  auto& self = const_cast<Classifier&>(*this);
  std::vector<nn::NamedTensor> tensors;
  tensors.push_back({"classifier.id", id_tensor(id_)});
  tensors.push_back({"classifier.classes", Tensor<float>({1}, static_cast<float>(classes_))});
  for (const nn::Parameter* p : self.parameters()) tensors.push_back({p->name, p->value()});
  return nn::write_container(tensors);
}

Classifier Classifier::load(std::span<const std::uint8_t> bytes) {
  const auto tensors = nn::read_container(bytes);
  std::string id;
  std::size_t classes = 0;
  for (const auto& t : tensors) {
    if (t.name == "classifier.id") {
      for (float v : t.tensor.data) id.push_back(static_cast<char>(v));
    } else if (t.name == "classifier.classes" && t.tensor.size() == 1) {
      classes = static_cast<std::size_t>(t.tensor.data[0]);
    }
  }
  if (id.empty() || classes == 0) throw FormatError("classifier container is missing its id or class count");
  Classifier model(id, 0, classes);
  nn::load_parameters(model.parameters(), bytes);
  return model;
}

Digest8 Classifier::weight_hash() const { return truncated_sha256(save()); }

int argmax(std::span<const float> logits) {
  if (logits.empty()) throw DimensionError("argmax of empty logits");
  std::size_t best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i)
    if (logits[i] > logits[best]) best = i;
  return static_cast<int>(best);
}

std::vector<Prediction> predict(const Classifier& model, const Tensor<float>& x, std::size_t batch) {
  nn::NoGradGuard guard;
  if (x.rank() != 4) throw DimensionError("predict expects (N, 3, 32, 32), got " + nn::to_string(x.shape));
  const std::size_t n = x.shape[0], per = x.size() / std::max<std::size_t>(n, 1);
  std::vector<Prediction> out;
  out.reserve(n);
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t m = std::min(batch, n - start);
    Tensor<float> chunk({m, x.shape[1], x.shape[2], x.shape[3]});
    std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(start * per), m * per, chunk.data.begin());
    const auto lg = model.logits(nn::constant(std::move(chunk)));
    const std::size_t k = lg.shape()[1];
    for (std::size_t i = 0; i < m; ++i) {
      Prediction p;
      p.logits.assign(lg.value().data.begin() + static_cast<std::ptrdiff_t>(i * k),
                      lg.value().data.begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
      p.label = argmax(p.logits);
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::vector<Prediction> predict(const Classifier& model, std::span<const Image8> images, std::size_t batch) {
  std::vector<Prediction> out;
  for (std::size_t start = 0; start < images.size(); start += batch) {
    auto part = predict(model, to_tensor(images.subspan(start, std::min(batch, images.size() - start))), batch);
    for (auto& p : part) out.push_back(std::move(p));
  }
  return out;
}

double accuracy(const Classifier& model, std::span<const Image8> images, std::span<const int> labels,
                std::size_t batch) {
  if (images.size() != labels.size()) throw DimensionError("accuracy: image and label counts differ");
  if (images.empty()) return 0.0;
  const auto preds = predict(model, images, batch);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) correct += preds[i].label == labels[i];
  return static_cast<double>(correct) / static_cast<double>(images.size());
}

ClassifierTrainResult train_classifier(const std::string& id, std::span<const Image8> images,
                                       std::span<const int> labels, const ClassifierTrainConfig& cfg,
                                       const std::function<void(std::size_t, double, double)>& on_epoch) {
  if (images.empty()) throw ConfigError("train_classifier: empty dataset");
  if (images.size() != labels.size()) throw DimensionError("train_classifier: image and label counts differ");
  ClassifierTrainResult result;
  result.model = Classifier(id, cfg.seed);
  auto params = result.model.parameters();
  std::mt19937_64 rng(cfg.seed ^ 0xc1a55ULL);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t m = std::min(cfg.batch, order.size() - start);
      std::vector<Image8> batch;
      std::vector<int> y;
      for (std::size_t i = 0; i < m; ++i) {
        batch.push_back(images[order[start + i]]);
        y.push_back(labels[order[start + i]]);
      }
      nn::zero_grad(params);
      auto lg = result.model.logits(nn::constant(to_tensor(batch)));
      auto loss = nn::cross_entropy(lg, std::span<const int>(y));
      nn::backward(loss);
      nn::adam_step(params, static_cast<float>(cfg.lr));
      loss_sum += loss.item() * static_cast<double>(m);
      const std::size_t k = lg.shape()[1];
      for (std::size_t i = 0; i < m; ++i) {
        std::span<const float> row(lg.value().data.data() + i * k, k);
        correct += argmax(row) == y[i];
      }
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(images.size());
    const double mean_loss = loss_sum / static_cast<double>(images.size());
    result.train_accuracy.push_back(acc);
    result.train_loss.push_back(mean_loss);
    if (on_epoch) on_epoch(epoch, mean_loss, acc);
  }
  return result;
}

}  // namespace pmc::classify
