#include "pmc/nn/losses.hpp"

#include <algorithm>
#include <cmath>

namespace pmc::nn {

namespace {

template <typename T>
T* grad_ptr(Node<T>* n) {
  n->value.ensure_grad();
  return n->value.grad.data();
}

// Separable Gaussian filter over one H x W plane with mirror borders
// (index -1 maps to 1). Apply and its exact adjoint.
class GaussianWindow {
 public:
  GaussianWindow(const SsimOptions& opts, std::size_t h, std::size_t w) : h_(h), w_(w) {
    if (opts.window % 2 == 0 || opts.window == 0) throw DimensionError("ssim: window size must be odd");
    if (h < opts.window || w < opts.window) {
      throw DimensionError("ssim: image " + std::to_string(h) + "x" + std::to_string(w) +
                           " smaller than window " + std::to_string(opts.window));
    }
    radius_ = opts.window / 2;
    taps_.resize(opts.window);
    double total = 0.0;
    for (std::size_t i = 0; i < opts.window; ++i) {
      const double d = static_cast<double>(i) - static_cast<double>(radius_);
      taps_[i] = std::exp(-d * d / (2.0 * opts.sigma * opts.sigma));
      total += taps_[i];
    }
    for (double& t : taps_) t /= total;
    tmp_.resize(h * w);
  }

  void apply(const double* in, double* out) {
    std::fill(tmp_.begin(), tmp_.end(), 0.0);
    for (std::size_t y = 0; y < h_; ++y) {
      for (std::size_t x = 0; x < w_; ++x) {
        double acc = 0.0;
        for (std::size_t j = 0; j < taps_.size(); ++j) acc += taps_[j] * in[y * w_ + mirror(x, j, w_)];
        tmp_[y * w_ + x] = acc;
      }
    }
    for (std::size_t y = 0; y < h_; ++y) {
      for (std::size_t x = 0; x < w_; ++x) {
        double acc = 0.0;
        for (std::size_t i = 0; i < taps_.size(); ++i) acc += taps_[i] * tmp_[mirror(y, i, h_) * w_ + x];
        out[y * w_ + x] = acc;
      }
    }
  }

  // out += F^T in
  void apply_adjoint(const double* in, double* out) {
    std::fill(tmp_.begin(), tmp_.end(), 0.0);
    for (std::size_t y = 0; y < h_; ++y) {
      for (std::size_t x = 0; x < w_; ++x) {
        for (std::size_t i = 0; i < taps_.size(); ++i) tmp_[mirror(y, i, h_) * w_ + x] += taps_[i] * in[y * w_ + x];
      }
    }
    for (std::size_t y = 0; y < h_; ++y) {
      for (std::size_t x = 0; x < w_; ++x) {
        for (std::size_t j = 0; j < taps_.size(); ++j) out[y * w_ + mirror(x, j, w_)] += taps_[j] * tmp_[y * w_ + x];
      }
    }
  }

 private:
  std::size_t mirror(std::size_t pos, std::size_t tap, std::size_t n) const {
    auto i = static_cast<std::ptrdiff_t>(pos + tap) - static_cast<std::ptrdiff_t>(radius_);
    const auto last = static_cast<std::ptrdiff_t>(n) - 1;
    if (i < 0) i = -i;
    if (i > last) i = 2 * last - i;
    return static_cast<std::size_t>(i);
  }

  std::size_t h_, w_, radius_ = 0;
  std::vector<double> taps_;
  std::vector<double> tmp_;
};

struct SsimPlaneStats {
  std::vector<double> mx, my, exx, eyy, exy;
  explicit SsimPlaneStats(std::size_t n) : mx(n), my(n), exx(n), eyy(n), exy(n) {}
};

// Computes the SSIM map of one plane; optionally also the partial derivatives
// of each map entry w.r.t. the five local statistics.
struct SsimPlane {
  GaussianWindow window;
  double c1, c2;
  std::size_t n;
  SsimPlaneStats stats;
  std::vector<double> sq, map;

  SsimPlane(const SsimOptions& opts, std::size_t h, std::size_t w)
      : window(opts, h, w),
        c1((opts.k1 * opts.dynamic_range) * (opts.k1 * opts.dynamic_range)),
        c2((opts.k2 * opts.dynamic_range) * (opts.k2 * opts.dynamic_range)),
        n(h * w),
        stats(h * w),
        sq(h * w),
        map(h * w) {}

  template <typename T>
  double forward(const T* a, const T* b) {
    std::vector<double> xa(a, a + n), xb(b, b + n);
    window.apply(xa.data(), stats.mx.data());
    window.apply(xb.data(), stats.my.data());
    for (std::size_t i = 0; i < n; ++i) sq[i] = xa[i] * xa[i];
    window.apply(sq.data(), stats.exx.data());
    for (std::size_t i = 0; i < n; ++i) sq[i] = xb[i] * xb[i];
    window.apply(sq.data(), stats.eyy.data());
    for (std::size_t i = 0; i < n; ++i) sq[i] = xa[i] * xb[i];
    window.apply(sq.data(), stats.exy.data());
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double mx = stats.mx[i], my = stats.my[i];
      const double vx = stats.exx[i] - mx * mx, vy = stats.eyy[i] - my * my, cxy = stats.exy[i] - mx * my;
      map[i] = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      total += map[i];
    }
    return total;
  }

  // Given upstream weight `g` per map entry, accumulates d/da and d/db.
  template <typename T>
  void backward(const T* a, const T* b, double g, T* ga, T* gb) {
    std::vector<double> d_mx(n), d_my(n), d_exx(n), d_eyy(n), d_exy(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double mx = stats.mx[i], my = stats.my[i];
      const double vx = stats.exx[i] - mx * mx, vy = stats.eyy[i] - my * my, cxy = stats.exy[i] - mx * my;
      const double a1 = 2 * mx * my + c1, a2 = 2 * cxy + c2;
      const double b1 = mx * mx + my * my + c1, b2 = vx + vy + c2;
      const double s = a1 * a2 / (b1 * b2);
      const double denom = b1 * b2;
      d_mx[i] = g * ((2 * my * a2 - 2 * my * a1) / denom - s * (2 * mx / b1 - 2 * mx / b2));
      d_my[i] = g * ((2 * mx * a2 - 2 * mx * a1) / denom - s * (2 * my / b1 - 2 * my / b2));
      d_exx[i] = g * (-s / b2);
      d_eyy[i] = g * (-s / b2);
      d_exy[i] = g * (2 * a1 / denom);
    }
    std::vector<double> t_mx(n, 0.0), t_my(n, 0.0), t_exx(n, 0.0), t_eyy(n, 0.0), t_exy(n, 0.0);
    window.apply_adjoint(d_mx.data(), t_mx.data());
    window.apply_adjoint(d_my.data(), t_my.data());
    window.apply_adjoint(d_exx.data(), t_exx.data());
    window.apply_adjoint(d_eyy.data(), t_eyy.data());
    window.apply_adjoint(d_exy.data(), t_exy.data());
    for (std::size_t i = 0; i < n; ++i) {
      const double xa = a[i], xb = b[i];
      if (ga) ga[i] += static_cast<T>(t_mx[i] + 2 * xa * t_exx[i] + xb * t_exy[i]);
      if (gb) gb[i] += static_cast<T>(t_my[i] + 2 * xb * t_eyy[i] + xa * t_exy[i]);
    }
  }
};

}  // namespace

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const int> labels) {
  if (logits.shape().size() != 2) {
    throw DimensionError("cross_entropy: logits must be (batch, classes), got " + to_string(logits.shape()));
  }
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                         std::to_string(n));
  }
  if (n == 0) throw DimensionError("cross_entropy: empty batch");
  std::vector<T> probs(n * k);
  double loss = 0.0;
  const T* z = logits.value().data.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw IndexError("cross_entropy: label " + std::to_string(labels[i]) + " out of range [0, " +
                       std::to_string(k) + ")");
    }
    const T* row = z + i * k;
    const T zmax = *std::max_element(row, row + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j] - zmax));
    const double log_denom = std::log(denom);
    for (std::size_t j = 0; j < k; ++j) {
      probs[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j] - zmax) - log_denom));
    }
    loss += -(static_cast<double>(row[labels[i]] - zmax) - log_denom);
  }
  Tensor<T> out(Shape{1}, static_cast<T>(loss / static_cast<double>(n)));
  std::vector<int> label_copy(labels.begin(), labels.end());
  return record(std::move(out), {logits}, [n, k, probs = std::move(probs), label_copy](Node<T>* o) mutable {
    return [o, n, k, probs = std::move(probs), label_copy]() {
      Node<T>* nz = o->inputs[0].get();
      if (!nz->requires_grad) return;
      T* gz = grad_ptr(nz);
      const T g = o->value.grad[0] / static_cast<T>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
          const T onehot = static_cast<std::size_t>(label_copy[i]) == j ? T(1) : T(0);
          gz[i * k + j] += g * (probs[i * k + j] - onehot);
        }
      }
    };
  });
}

template <typename T>
Var<T> mse(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mse: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  if (a.size() == 0) throw DimensionError("mse: empty tensors");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a.value().data[i]) - static_cast<double>(b.value().data[i]);
    acc += d * d;
  }
  Tensor<T> out(Shape{1}, static_cast<T>(acc / static_cast<double>(a.size())));
  return record(std::move(out), {a, b}, [](Node<T>* o) {
    return [o]() {
      Node<T>* na = o->inputs[0].get();
      Node<T>* nb = o->inputs[1].get();
      const std::size_t n = na->value.size();
      const T g = o->value.grad[0] * T(2) / static_cast<T>(n);
      T* ga = na->requires_grad ? grad_ptr(na) : nullptr;
      T* gb = nb->requires_grad ? grad_ptr(nb) : nullptr;
      for (std::size_t i = 0; i < n; ++i) {
        const T d = na->value.data[i] - nb->value.data[i];
        if (ga) ga[i] += g * d;
        if (gb) gb[i] -= g * d;
      }
    };
  });
}

template <typename T>
Var<T> ssim(const Var<T>& a, const Var<T>& b, const SsimOptions& opts) {
  if (a.shape() != b.shape()) {
    throw DimensionError("ssim: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
  if (a.shape().size() != 4) throw DimensionError("ssim: expected NCHW images, got " + to_string(a.shape()));
  const std::size_t h = a.shape()[2], w = a.shape()[3];
  const std::size_t planes = a.shape()[0] * a.shape()[1];
  SsimPlane plane(opts, h, w);
  double total = 0.0;
  for (std::size_t p = 0; p < planes; ++p) {
    total += plane.forward(a.value().data.data() + p * h * w, b.value().data.data() + p * h * w);
  }
  const double count = static_cast<double>(planes * h * w);
  Tensor<T> out(Shape{1}, static_cast<T>(total / count));
  return record(std::move(out), {a, b}, [opts, h, w, planes, count](Node<T>* o) {
    return [o, opts, h, w, planes, count]() {
      Node<T>* na = o->inputs[0].get();
      Node<T>* nb = o->inputs[1].get();
      SsimPlane plane(opts, h, w);
      const double g = static_cast<double>(o->value.grad[0]) / count;
      T* ga = na->requires_grad ? grad_ptr(na) : nullptr;
      T* gb = nb->requires_grad ? grad_ptr(nb) : nullptr;
      for (std::size_t p = 0; p < planes; ++p) {
        const T* pa = na->value.data.data() + p * h * w;
        const T* pb = nb->value.data.data() + p * h * w;
        plane.forward(pa, pb);
        plane.backward(pa, pb, g, ga ? ga + p * h * w : nullptr, gb ? gb + p * h * w : nullptr);
      }
    };
  });
}

std::vector<double> ssim_per_image(const Tensor<float>& a, const Tensor<float>& b, const SsimOptions& opts) {
  if (a.shape != b.shape || a.shape.size() != 4) {
    throw DimensionError("ssim_per_image: shapes " + to_string(a.shape) + " vs " + to_string(b.shape));
  }
  const std::size_t n = a.shape[0], c = a.shape[1], h = a.shape[2], w = a.shape[3];
  SsimPlane plane(opts, h, w);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * h * w;
      total += plane.forward(a.data.data() + off, b.data.data() + off);
    }
    out[i] = total / static_cast<double>(c * h * w);
  }
  return out;
}

template Var<float> cross_entropy<float>(const Var<float>&, std::span<const int>);
template Var<double> cross_entropy<double>(const Var<double>&, std::span<const int>);
template Var<float> mse<float>(const Var<float>&, const Var<float>&);
template Var<double> mse<double>(const Var<double>&, const Var<double>&);
template Var<float> ssim<float>(const Var<float>&, const Var<float>&, const SsimOptions&);
template Var<double> ssim<double>(const Var<double>&, const Var<double>&, const SsimOptions&);

}  // namespace pmc::nn
