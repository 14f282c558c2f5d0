#include "pmc/entropy/bottleneck.hpp"

#include <algorithm>
#include <cmath>

#include "pmc/error.hpp"

namespace pmc::entropy {

using nn::Node;
using nn::Parameter;
using nn::Shape;
using nn::Tensor;
using nn::Var;

namespace {

constexpr std::size_t kStages = 4;
constexpr std::size_t kMaxWidth = 3;

template <typename S>
S softplus(S r) {
  return r > S(20) ? r : std::log1p(std::exp(r));
}

template <typename S>
S sigmoid(S x) {
  return x >= S(0) ? S(1) / (S(1) + std::exp(-x)) : std::exp(x) / (S(1) + std::exp(x));
}

double inverse_softplus(double y) { return std::log(std::expm1(y)); }

std::size_t in_width(std::size_t k) { return kDensityWidths[k]; }
std::size_t out_width(std::size_t k) { return kDensityWidths[k + 1]; }

// Effective parameters of one channel's density, evaluated in precision S.
template <typename S>
struct ChannelDensity {
  S w[kStages][kMaxWidth * kMaxWidth];
  S w_slope[kStages][kMaxWidth * kMaxWidth];  // softplus'(raw)
  S b[kStages][kMaxWidth];
  S t[kStages - 1][kMaxWidth];  // tanh(raw factor)

  struct Trace {
    S h[kStages][kMaxWidth];    // stage inputs; h[0][0] = x
    S pre[kStages][kMaxWidth];  // affine outputs
  };

  struct Grads {
    S w[kStages][kMaxWidth * kMaxWidth] = {};
    S b[kStages][kMaxWidth] = {};
    S t[kStages - 1][kMaxWidth] = {};
  };

  template <typename T>
  static ChannelDensity load(const DensityParams<T>& p, std::size_t c) {
    ChannelDensity d;
    for (std::size_t k = 0; k < kStages; ++k) {
      const std::size_t n = in_width(k) * out_width(k);
      for (std::size_t j = 0; j < n; ++j) {
        const S raw = static_cast<S>(p.matrices[k].value().data[c * n + j]);
        d.w[k][j] = softplus(raw);
        d.w_slope[k][j] = sigmoid(raw);
      }
      for (std::size_t j = 0; j < out_width(k); ++j) {
        d.b[k][j] = static_cast<S>(p.biases[k].value().data[c * out_width(k) + j]);
        if (k + 1 < kStages) d.t[k][j] = std::tanh(static_cast<S>(p.factors[k].value().data[c * out_width(k) + j]));
      }
    }
    return d;
  }

  S forward(S x, Trace* tr) const {
    S h[kMaxWidth] = {x};
    for (std::size_t k = 0; k < kStages; ++k) {
      if (tr) std::copy(h, h + in_width(k), tr->h[k]);
      S next[kMaxWidth];
      for (std::size_t j = 0; j < out_width(k); ++j) {
        S acc = b[k][j];
        for (std::size_t i = 0; i < in_width(k); ++i) acc += w[k][j * in_width(k) + i] * h[i];
        if (tr) tr->pre[k][j] = acc;
        next[j] = k + 1 < kStages ? acc + t[k][j] * std::tanh(acc) : acc;
      }
      std::copy(next, next + out_width(k), h);
    }
    return h[0];
  }

  // Adds d(logit)/d(params) * g into grads and returns d(logit)/dx * g.
  S backward(const Trace& tr, S g, Grads& grads) const {
    S dh[kMaxWidth] = {g};
    for (std::size_t kk = kStages; kk-- > 0;) {
      S dpre[kMaxWidth];
      for (std::size_t j = 0; j < out_width(kk); ++j) {
        if (kk + 1 < kStages) {
          const S th = std::tanh(tr.pre[kk][j]);
          grads.t[kk][j] += dh[j] * th;
          dpre[j] = dh[j] * (S(1) + t[kk][j] * (S(1) - th * th));
        } else {
          dpre[j] = dh[j];
        }
        grads.b[kk][j] += dpre[j];
      }
      S dprev[kMaxWidth] = {};
      for (std::size_t j = 0; j < out_width(kk); ++j) {
        for (std::size_t i = 0; i < in_width(kk); ++i) {
          grads.w[kk][j * in_width(kk) + i] += dpre[j] * tr.h[kk][i];
          dprev[i] += w[kk][j * in_width(kk) + i] * dpre[j];
        }
      }
      std::copy(dprev, dprev + in_width(kk), dh);
    }
    return dh[0];
  }

  // Chains effective-parameter grads to the raw parameter nodes.
  template <typename T>
  void scatter(const Grads& grads, const std::vector<Node<T>*>& nodes, std::size_t c) const {
    for (std::size_t k = 0; k < kStages; ++k) {
      if (Node<T>* m = nodes[k]; m && m->requires_grad) {
        m->value.ensure_grad();
        const std::size_t n = in_width(k) * out_width(k);
        for (std::size_t j = 0; j < n; ++j) m->value.grad[c * n + j] += static_cast<T>(grads.w[k][j] * w_slope[k][j]);
      }
      if (Node<T>* bn = nodes[kStages + k]; bn && bn->requires_grad) {
        bn->value.ensure_grad();
        for (std::size_t j = 0; j < out_width(k); ++j) bn->value.grad[c * out_width(k) + j] += static_cast<T>(grads.b[k][j]);
      }
      if (k + 1 < kStages) {
        if (Node<T>* f = nodes[2 * kStages + k]; f && f->requires_grad) {
          f->value.ensure_grad();
          for (std::size_t j = 0; j < out_width(k); ++j) {
            f->value.grad[c * out_width(k) + j] += static_cast<T>(grads.t[k][j] * (S(1) - t[k][j] * t[k][j]));
          }
        }
      }
    }
  }
};

template <typename T>
void check_density_shapes(const DensityParams<T>& p) {
  const std::size_t c = p.matrices[0].shape().empty() ? 0 : p.matrices[0].shape()[0];
  for (std::size_t k = 0; k < kStages; ++k) {
    if (p.matrices[k].shape() != Shape{c, out_width(k), in_width(k)} || p.biases[k].shape() != Shape{c, out_width(k)} ||
        (k + 1 < kStages && p.factors[k].shape() != Shape{c, out_width(k)})) {
      throw DimensionError("entropy bottleneck stage " + std::to_string(k) + " has inconsistent parameter shapes");
    }
  }
}

template <typename T>
std::vector<Var<T>> density_inputs(const DensityParams<T>& p) {
  std::vector<Var<T>> v(p.matrices.begin(), p.matrices.end());
  v.insert(v.end(), p.biases.begin(), p.biases.end());
  v.insert(v.end(), p.factors.begin(), p.factors.end());
  return v;
}

// Mass of [lower, upper] from the two logits, evaluated on the side of the
// median where the sigmoids are not saturated.
template <typename S>
S bin_mass(S lower, S upper, S* d_lower = nullptr, S* d_upper = nullptr) {
  const S s = lower + upper > S(0) ? S(-1) : S(1);
  const S cu = sigmoid(s * upper);
  const S cl = sigmoid(s * lower);
  if (d_upper) *d_upper = cu * (S(1) - cu);
  if (d_lower) *d_lower = -cl * (S(1) - cl);
  return s * (cu - cl);
}

void check_ordered(double lower, double upper) {
  if (upper < lower - 1e-4 * (1.0 + std::abs(lower))) {
    throw ModelIntegrityError("entropy bottleneck density is not monotone (" + std::to_string(lower) + " > " +
                              std::to_string(upper) + ")");
  }
}

}  // namespace

template <typename T>
Var<T> quantize(const Var<T>& y, QuantizeMode mode, std::mt19937_64* rng) {
  Tensor<T> out(y.shape());
  const auto& in = y.value().data;
  if (mode == QuantizeMode::kEval) {
    for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = std::round(in[i]);
    return nn::constant(std::move(out));
  }
  if (!rng) throw ConfigError("quantize: train mode needs a random engine");
  std::uniform_real_distribution<double> noise(-0.5, 0.5);
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = in[i] + static_cast<T>(noise(*rng));
  return nn::record(std::move(out), {y}, [](Node<T>* o) {
    return [o]() {
      Node<T>* x = o->inputs[0].get();
      if (!x->requires_grad) return;
      x->value.ensure_grad();
      for (std::size_t i = 0; i < o->value.grad.size(); ++i) x->value.grad[i] += o->value.grad[i];
    };
  });
}

template <typename T>
Var<T> likelihood(const Var<T>& q, const DensityParams<T>& density) {
  check_density_shapes(density);
  const std::size_t channels = density.channels();
  if (q.value().rank() < 2 || q.shape()[1] != channels) {
    throw DimensionError("likelihood: latent shape " + nn::to_string(q.shape()) + " does not match " +
                         std::to_string(channels) + " channels");
  }
  std::size_t inner = 1;
  for (std::size_t d = 2; d < q.value().rank(); ++d) inner *= q.shape()[d];

  std::vector<ChannelDensity<T>> per_channel;
  per_channel.reserve(channels);
  for (std::size_t c = 0; c < channels; ++c) per_channel.push_back(ChannelDensity<T>::load(density, c));

  Tensor<T> out(q.shape());
  const auto& qv = q.value().data;
  for (std::size_t i = 0; i < qv.size(); ++i) {
    const auto& d = per_channel[(i / inner) % channels];
    const T lower = d.forward(qv[i] - T(0.5), nullptr);
    const T upper = d.forward(qv[i] + T(0.5), nullptr);
    check_ordered(lower, upper);
    out.data[i] = std::max(bin_mass(lower, upper), static_cast<T>(kLikelihoodFloor));
  }

  std::vector<Var<T>> inputs{q};
  auto params = density_inputs(density);
  inputs.insert(inputs.end(), params.begin(), params.end());
  return nn::record_range(std::move(out), inputs, [per_channel = std::move(per_channel), inner, channels](Node<T>* o) {
    return [o, per_channel, inner, channels]() {
      Node<T>* qn = o->inputs[0].get();
      std::vector<Node<T>*> pnodes;
      for (std::size_t k = 1; k < o->inputs.size(); ++k) pnodes.push_back(o->inputs[k].get());
      if (qn->requires_grad) qn->value.ensure_grad();
      std::vector<typename ChannelDensity<T>::Grads> grads(channels);
      const auto& qv = qn->value.data;
      const auto& g = o->value.grad;
      for (std::size_t i = 0; i < qv.size(); ++i) {
        const std::size_t c = (i / inner) % channels;
        const auto& d = per_channel[c];
        typename ChannelDensity<T>::Trace tl, tu;
        const T lower = d.forward(qv[i] - T(0.5), &tl);
        const T upper = d.forward(qv[i] + T(0.5), &tu);
        T dl, du;
        const T p = bin_mass(lower, upper, &dl, &du);
        // Lower bound passes gradients that would raise p.
        if (p < static_cast<T>(kLikelihoodFloor) && g[i] >= T(0)) continue;
        const T dx = d.backward(tl, g[i] * dl, grads[c]) + d.backward(tu, g[i] * du, grads[c]);
        if (qn->requires_grad) qn->value.grad[i] += dx;
      }
      for (std::size_t c = 0; c < channels; ++c) per_channel[c].scatter(grads[c], pnodes, c);
    };
  });
}

template <typename T>
Var<T> aux_loss(const Var<T>& quantiles, const DensityParams<T>& density) {
  check_density_shapes(density);
  const std::size_t channels = density.channels();
  if (quantiles.shape() != Shape{channels, 2}) {
    throw DimensionError("aux_loss: quantiles shape " + nn::to_string(quantiles.shape()) + ", expected " +
                         nn::to_string(Shape{channels, 2}));
  }
  // Tail masses are computed from logits directly: c(lo) = sigmoid(l),
  // 1 - c(hi) = sigmoid(-l), which stays accurate near 1e-9.
  const T half = static_cast<T>(kTailMass / 2);
  std::vector<T> slopes(2 * channels), signs(2 * channels);
  T total = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    const auto d = ChannelDensity<T>::load(density, c);
    for (int side = 0; side < 2; ++side) {
      const T x = quantiles.value().data[2 * c + side];
      typename ChannelDensity<T>::Trace tr;
      const T l = d.forward(x, &tr);
      typename ChannelDensity<T>::Grads unused;
      const T dl_dx = d.backward(tr, T(1), unused);
      const T tail = side == 0 ? sigmoid(l) : sigmoid(-l);
      const T dtail_dx = tail * (T(1) - tail) * dl_dx * (side == 0 ? T(1) : T(-1));
      const T diff = tail - half;
      total += std::abs(diff);
      signs[2 * c + side] = diff > 0 ? T(1) : (diff < 0 ? T(-1) : T(0));
      slopes[2 * c + side] = dtail_dx;
    }
  }
  Tensor<T> out(Shape{}, std::vector<T>{total});
  return nn::record(std::move(out), {quantiles}, [slopes, signs](Node<T>* o) {
    return [o, slopes, signs]() {
      Node<T>* qn = o->inputs[0].get();
      if (!qn->requires_grad) return;
      qn->value.ensure_grad();
      for (std::size_t i = 0; i < slopes.size(); ++i) qn->value.grad[i] += o->value.grad[0] * signs[i] * slopes[i];
    };
  });
}

template Var<float> quantize<float>(const Var<float>&, QuantizeMode, std::mt19937_64*);
template Var<double> quantize<double>(const Var<double>&, QuantizeMode, std::mt19937_64*);
template Var<float> likelihood<float>(const Var<float>&, const DensityParams<float>&);
template Var<double> likelihood<double>(const Var<double>&, const DensityParams<double>&);
template Var<float> aux_loss<float>(const Var<float>&, const DensityParams<float>&);
template Var<double> aux_loss<double>(const Var<double>&, const DensityParams<double>&);

EntropyBottleneck::EntropyBottleneck(std::size_t channels, double init_scale, std::mt19937_64& rng,
                                     const std::string& prefix)
    : channels_(channels) {
  init_parameters(prefix);
  const double stage_scale = std::pow(init_scale, 1.0 / kStages);
  std::uniform_real_distribution<float> bias(-0.5f, 0.5f);
  for (std::size_t k = 0; k < kStages; ++k) {
    const float raw = static_cast<float>(inverse_softplus(1.0 / stage_scale / static_cast<double>(out_width(k))));
    std::fill(matrices_[k].value().data.begin(), matrices_[k].value().data.end(), raw);
    for (auto& b : biases_[k].value().data) b = bias(rng);
  }
  for (std::size_t c = 0; c < channels; ++c) {
    quantiles_.value().data[2 * c] = static_cast<float>(-init_scale);
    quantiles_.value().data[2 * c + 1] = static_cast<float>(init_scale);
  }
}

EntropyBottleneck EntropyBottleneck::logistic(std::size_t channels, double scale, const std::string& prefix) {
  EntropyBottleneck eb;
  eb.channels_ = channels;
  eb.init_parameters(prefix);
  // Stage gains 1/(3s), 1/3, 1/3, 1 compose to x/s; all gates off.
  const std::array<double, 4> gains{1.0 / (3.0 * scale), 1.0 / 3.0, 1.0 / 3.0, 1.0};
  for (std::size_t k = 0; k < kStages; ++k) {
    const float raw = static_cast<float>(inverse_softplus(gains[k]));
    std::fill(eb.matrices_[k].value().data.begin(), eb.matrices_[k].value().data.end(), raw);
  }
  const double tail = scale * std::log(2.0 / kTailMass - 1.0);
  for (std::size_t c = 0; c < channels; ++c) {
    eb.quantiles_.value().data[2 * c] = static_cast<float>(-tail);
    eb.quantiles_.value().data[2 * c + 1] = static_cast<float>(tail);
  }
  return eb;
}

void EntropyBottleneck::init_parameters(const std::string& prefix) {
  for (std::size_t k = 0; k < kStages; ++k) {
    const std::string idx = std::to_string(k);
    matrices_[k] = Parameter(prefix + ".matrix" + idx, Tensor<float>({channels_, out_width(k), in_width(k)}, 0.0f));
    biases_[k] = Parameter(prefix + ".bias" + idx, Tensor<float>({channels_, out_width(k)}, 0.0f));
    if (k + 1 < kStages) {
      factors_[k] = Parameter(prefix + ".factor" + idx, Tensor<float>({channels_, out_width(k)}, 0.0f));
    }
  }
  quantiles_ = Parameter(prefix + ".quantiles", Tensor<float>({channels_, 2}, 0.0f));
}

DensityParams<float> EntropyBottleneck::density() const {
  DensityParams<float> p;
  for (std::size_t k = 0; k < kStages; ++k) {
    p.matrices[k] = matrices_[k].var;
    p.biases[k] = biases_[k].var;
    if (k + 1 < kStages) p.factors[k] = factors_[k].var;
  }
  return p;
}

Var<float> EntropyBottleneck::likelihood(const Var<float>& q) const { return entropy::likelihood(q, density()); }

Var<float> EntropyBottleneck::aux_loss() const { return entropy::aux_loss(quantiles_.var, density()); }

nn::ParameterRefs EntropyBottleneck::parameters() {
  nn::ParameterRefs refs;
  for (std::size_t k = 0; k < kStages; ++k) {
    refs.push_back(&matrices_[k]);
    refs.push_back(&biases_[k]);
    if (k + 1 < kStages) refs.push_back(&factors_[k]);
  }
  return refs;
}

nn::ParameterRefs EntropyBottleneck::aux_parameters() { return {&quantiles_}; }

double EntropyBottleneck::logit(std::size_t channel, double x) const {
  if (channel >= channels_) throw IndexError("channel " + std::to_string(channel) + " out of range");
  return ChannelDensity<double>::load(density(), channel).forward(x, nullptr);
}

double EntropyBottleneck::cdf(std::size_t channel, double x) const { return sigmoid(logit(channel, x)); }

double EntropyBottleneck::pmf(std::size_t channel, std::int32_t q) const {
  const auto d = ChannelDensity<double>::load(density(), channel);
  return bin_mass(d.forward(q - 0.5, nullptr), d.forward(q + 0.5, nullptr));
}

void EntropyBottleneck::check_monotone(double lo, double hi, std::size_t points) const {
  for (std::size_t c = 0; c < channels_; ++c) {
    const auto d = ChannelDensity<double>::load(density(), c);
    double prev = d.forward(lo, nullptr);
    for (std::size_t i = 1; i < points; ++i) {
      const double x = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(points - 1);
      const double l = d.forward(x, nullptr);
      if (!std::isfinite(l)) throw ModelIntegrityError("entropy bottleneck density is not finite");
      if (l < prev - 1e-9 * (1.0 + std::abs(prev))) {
        throw ModelIntegrityError("entropy bottleneck channel " + std::to_string(c) + " decreases at x=" +
                                  std::to_string(x));
      }
      prev = l;
    }
  }
}

CdfTableSet EntropyBottleneck::build_cdf_tables() const {
  check_monotone();
  const double half = kTailMass / 2;
  CdfTableSet tables;
  tables.reserve(channels_);
  for (std::size_t c = 0; c < channels_; ++c) {
    const auto d = ChannelDensity<double>::load(density(), c);
    auto below = [&](std::int32_t q) { return sigmoid(d.forward(q - 0.5, nullptr)); };
    auto above = [&](std::int32_t q) { return sigmoid(-d.forward(q + 0.5, nullptr)); };
    std::int32_t lo = 0, hi = 0;
    while (lo > -kMaxTableRadius && below(lo) > half) --lo;
    while (hi < kMaxTableRadius && above(hi) > half) ++hi;
    std::vector<double> pmf;
    pmf.reserve(static_cast<std::size_t>(hi - lo + 1));
    for (std::int32_t q = lo; q <= hi; ++q) pmf.push_back(std::max(0.0, bin_mass(d.forward(q - 0.5, nullptr), d.forward(q + 0.5, nullptr))));
    tables.push_back(make_table(lo, pmf, below(lo), above(hi)));
  }
  return tables;
}

}  // namespace pmc::entropy
