#include "pmc/nn/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "conv_kernels.hpp"

namespace pmc::nn {

using detail::CMapMat;
using detail::CMapVec;
using detail::MapMat;
using detail::MapVec;
using detail::RowMat;

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) {
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
  }
}

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         to_string(s));
  }
}

template <typename T>
T* grad_ptr(Node<T>* n) {
  n->value.ensure_grad();
  return n->value.grad.data();
}

// Elementwise op whose local derivative depends on (input, output).
template <typename T, typename Fwd, typename Deriv>
Var<T> pointwise(const Var<T>& x, Fwd fwd, Deriv deriv) {
  Tensor<T> out(x.shape());
  const auto& in = x.value().data;
  for (std::size_t i = 0; i < in.size(); ++i) out.data[i] = fwd(in[i]);
  return record(std::move(out), {x}, [deriv](Node<T>* o) {
    return [o, deriv]() {
      Node<T>* xi = o->inputs[0].get();
      if (!xi->requires_grad) return;
      T* gx = grad_ptr(xi);
      const auto& g = o->value.grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xi->value.data[i], o->value.data[i]);
    };
  });
}

}  // namespace

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding) {
  if (stride == 0) throw DimensionError("conv: stride must be >= 1");
  if (in + 2 * padding < kernel) {
    throw DimensionError("conv: kernel " + std::to_string(kernel) + " larger than padded input " +
                         std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

std::size_t deconv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t padding,
                               std::size_t output_padding) {
  if (stride == 0) throw DimensionError("deconv: stride must be >= 1");
  if (in == 0) throw DimensionError("deconv: empty input");
  if (output_padding >= stride && output_padding >= 1) {
    throw DimensionError("deconv: output_padding must be smaller than stride");
  }
  const std::size_t full = (in - 1) * stride + kernel + output_padding;
  if (full <= 2 * padding) throw DimensionError("deconv: padding consumes the whole output");
  return full - 2 * padding;
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] + b.value().data[i];
  return record(std::move(out), {a, b}, [](Node<T>* o) {
    return [o]() {
      const auto& g = o->value.grad;
      for (auto& in : o->inputs) {
        if (!in->requires_grad) continue;
        T* gi = grad_ptr(in.get());
        for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
      }
    };
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] - b.value().data[i];
  return record(std::move(out), {a, b}, [](Node<T>* o) {
    return [o]() {
      const auto& g = o->value.grad;
      Node<T>* na = o->inputs[0].get();
      Node<T>* nb = o->inputs[1].get();
      if (na->requires_grad) {
        T* ga = grad_ptr(na);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (nb->requires_grad) {
        T* gb = grad_ptr(nb);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    };
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = a.value().data[i] * b.value().data[i];
  return record(std::move(out), {a, b}, [](Node<T>* o) {
    return [o]() {
      const auto& g = o->value.grad;
      Node<T>* na = o->inputs[0].get();
      Node<T>* nb = o->inputs[1].get();
      if (na->requires_grad) {
        T* ga = grad_ptr(na);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * nb->value.data[i];
      }
      if (nb->requires_grad) {
        T* gb = grad_ptr(nb);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * na->value.data[i];
      }
    };
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  return pointwise(a, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  return pointwise(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return pointwise(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  for (T v : x.value().data) {
    if (!(v > T(0))) throw NumericError("log: non-positive input");
  }
  return pointwise(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> clamp_straight_through(const Var<T>& x, T lo, T hi) {
  return pointwise(x, [lo, hi](T v) { return std::clamp(v, lo, hi); }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> sum(const Var<T>& x) {
  double acc = 0.0;
  for (T v : x.value().data) acc += static_cast<double>(v);
  Tensor<T> out(Shape{1}, static_cast<T>(acc));
  return record(std::move(out), {x}, [](Node<T>* o) {
    return [o]() {
      Node<T>* xi = o->inputs[0].get();
      if (!xi->requires_grad) return;
      T* gx = grad_ptr(xi);
      const T g = o->value.grad[0];
      for (std::size_t i = 0; i < xi->value.size(); ++i) gx[i] += g;
    };
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  if (x.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
  }
  Tensor<T> out(std::move(shape), x.value().data);
  return record(std::move(out), {x}, [](Node<T>* o) {
    return [o]() {
      Node<T>* xi = o->inputs[0].get();
      if (!xi->requires_grad) return;
      T* gx = grad_ptr(xi);
      const auto& g = o->value.grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    };
  });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  require_rank(a.shape(), 4, "concat_channels", "a");
  require_rank(b.shape(), 4, "concat_channels", "b");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sa[0] != sb[0] || sa[2] != sb[2] || sa[3] != sb[3]) {
    throw DimensionError("concat_channels: shape mismatch " + to_string(sa) + " vs " + to_string(sb));
  }
  const std::size_t n = sa[0], plane = sa[2] * sa[3];
  const std::size_t ca = sa[1] * plane, cb = sb[1] * plane;
  Tensor<T> out(Shape{n, sa[1] + sb[1], sa[2], sa[3]});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.value().data.data() + i * ca, ca, out.data.data() + i * (ca + cb));
    std::copy_n(b.value().data.data() + i * cb, cb, out.data.data() + i * (ca + cb) + ca);
  }
  return record(std::move(out), {a, b}, [n, ca, cb](Node<T>* o) {
    return [o, n, ca, cb]() {
      const T* g = o->value.grad.data();
      Node<T>* na = o->inputs[0].get();
      Node<T>* nb = o->inputs[1].get();
      for (std::size_t i = 0; i < n; ++i) {
        const T* gi = g + i * (ca + cb);
        if (na->requires_grad) {
          T* ga = grad_ptr(na) + i * ca;
          for (std::size_t j = 0; j < ca; ++j) ga[j] += gi[j];
        }
        if (nb->requires_grad) {
          T* gb = grad_ptr(nb) + i * cb;
          for (std::size_t j = 0; j < cb; ++j) gb[j] += gi[ca + j];
        }
      }
    };
  });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x) {
  require_rank(x.shape(), 4, "maxpool2d", "input");
  const auto& s = x.shape();
  const std::size_t n = s[0], c = s[1], h = s[2], w = s[3];
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw DimensionError("maxpool2d: input too small " + to_string(s));
  Tensor<T> out(Shape{n, c, oh, ow});
  std::vector<std::uint32_t> argmax(out.size());
  const T* in = x.value().data.data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const T* plane = in + p * h * w;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = (2 * i) * w + 2 * j;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t idx = (2 * i + di) * w + 2 * j + dj;
            if (plane[idx] > plane[best]) best = idx;
          }
        }
        const std::size_t o = p * oh * ow + i * ow + j;
        out.data[o] = plane[best];
        argmax[o] = static_cast<std::uint32_t>(p * h * w + best);
      }
    }
  }
  return record(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>* o) mutable {
    return [o, argmax = std::move(argmax)]() {
      Node<T>* xi = o->inputs[0].get();
      if (!xi->requires_grad) return;
      T* gx = grad_ptr(xi);
      const auto& g = o->value.grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[argmax[i]] += g[i];
    };
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  require_rank(x.shape(), 2, "linear", "input");
  require_rank(weight.shape(), 2, "linear", "weight");
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_f = weight.shape()[0];
  if (weight.shape()[1] != in || bias.size() != out_f) {
    throw DimensionError("linear: input " + to_string(x.shape()) + " incompatible with weight " +
                         to_string(weight.shape()) + " / bias " + to_string(bias.shape()));
  }
  Tensor<T> out(Shape{n, out_f});
  CMapMat<T> wm(weight.value().data.data(), out_f, in);
  CMapVec<T> bv(bias.value().data.data(), out_f);
  // Per-sample products keep each row's result independent of batch size.
  for (std::size_t i = 0; i < n; ++i) {
    CMapVec<T> xv(x.value().data.data() + i * in, in);
    MapVec<T> yv(out.data.data() + i * out_f, out_f);
    yv.noalias() = wm * xv;
    yv += bv;
  }
  return record(std::move(out), {x, weight, bias}, [n, in, out_f](Node<T>* o) {
    return [o, n, in, out_f]() {
      Node<T>* nx = o->inputs[0].get();
      Node<T>* nw = o->inputs[1].get();
      Node<T>* nb = o->inputs[2].get();
      CMapMat<T> g(o->value.grad.data(), n, out_f);
      if (nw->requires_grad) {
        MapMat<T> gw(grad_ptr(nw), out_f, in);
        gw.noalias() += g.transpose() * CMapMat<T>(nx->value.data.data(), n, in);
      }
      if (nb->requires_grad) {
        T* gb = grad_ptr(nb);
        const T* gp = o->value.grad.data();
        for (std::size_t r = 0; r < n; ++r)
          for (std::size_t f = 0; f < out_f; ++f) gb[f] += gp[r * out_f + f];
      }
      if (nx->requires_grad) {
        MapMat<T> gx(grad_ptr(nx), n, in);
        gx.noalias() += g * CMapMat<T>(nw->value.data.data(), out_f, in);
      }
    };
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t padding) {
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(weight.shape(), 4, "conv2d", "weight");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3] || bias.size() != ws[0]) {
    throw DimensionError("conv2d: input " + to_string(xs) + " incompatible with weight " + to_string(ws) +
                         " / bias " + to_string(bias.shape()));
  }
  detail::ConvGeom geom{xs[1], xs[2], xs[3], ws[2], stride, padding,
                        conv_output_size(xs[2], ws[2], stride, padding),
                        conv_output_size(xs[3], ws[2], stride, padding)};
  const std::size_t n = xs[0], oc = ws[0];
  const std::size_t rows = geom.rows(), cols = geom.cols();
  const std::size_t in_stride = geom.channels * geom.height * geom.width;

  Tensor<T> out(Shape{n, oc, geom.out_h, geom.out_w});
  const bool keep = grad_enabled() && (x.requires_grad() || weight.requires_grad() || bias.requires_grad());
  std::vector<T> colbuf(keep ? n * rows * cols : rows * cols);
  CMapMat<T> wm(weight.value().data.data(), oc, rows);
  for (std::size_t i = 0; i < n; ++i) {
    T* col = colbuf.data() + (keep ? i * rows * cols : 0);
    detail::im2col(x.value().data.data() + i * in_stride, geom, col);
    MapMat<T> om(out.data.data() + i * oc * cols, oc, cols);
    om.noalias() = wm * CMapMat<T>(col, rows, cols);
    for (std::size_t c = 0; c < oc; ++c) om.row(c).array() += bias.value().data[c];
  }
  if (!keep) colbuf.clear();

  return record(std::move(out), {x, weight, bias}, [geom, n, oc, in_stride, colbuf = std::move(colbuf)](
                                                        Node<T>* o) mutable {
    return [o, geom, n, oc, in_stride, colbuf = std::move(colbuf)]() {
      Node<T>* nx = o->inputs[0].get();
      Node<T>* nw = o->inputs[1].get();
      Node<T>* nb = o->inputs[2].get();
      const std::size_t rows = geom.rows(), cols = geom.cols();
      CMapMat<T> wm(nw->value.data.data(), oc, rows);
      std::vector<T> gcol(nx->requires_grad ? rows * cols : 0);
      for (std::size_t i = 0; i < n; ++i) {
        CMapMat<T> g(o->value.grad.data() + i * oc * cols, oc, cols);
        CMapMat<T> col(colbuf.data() + i * rows * cols, rows, cols);
        if (nw->requires_grad) {
          MapMat<T> gw(grad_ptr(nw), oc, rows);
          gw.noalias() += g * col.transpose();
        }
        if (nb->requires_grad) {
          // Plain loops: Eigen reductions over unaligned maps pick their
          // summation order from the pointer alignment, which breaks determinism.
          T* gb = grad_ptr(nb);
          const T* gp = o->value.grad.data() + i * oc * cols;
          for (std::size_t c = 0; c < oc; ++c) {
            T acc = 0;
            for (std::size_t p = 0; p < cols; ++p) acc += gp[c * cols + p];
            gb[c] += acc;
          }
        }
        if (nx->requires_grad) {
          MapMat<T> gc(gcol.data(), rows, cols);
          gc.noalias() = wm.transpose() * g;
          detail::col2im(gcol.data(), geom, grad_ptr(nx) + i * in_stride);
        }
      }
    };
  });
}

template <typename T>
Var<T> deconv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, std::size_t stride, std::size_t padding,
                std::size_t output_padding) {
  require_rank(x.shape(), 4, "deconv2d", "input");
  require_rank(weight.shape(), 4, "deconv2d", "weight");
  const auto& xs = x.shape();
  const auto& ws = weight.shape();
  if (ws[0] != xs[1] || ws[2] != ws[3] || bias.size() != ws[1]) {
    throw DimensionError("deconv2d: input " + to_string(xs) + " incompatible with weight " + to_string(ws) +
                         " / bias " + to_string(bias.shape()));
  }
  const std::size_t n = xs[0], ic = xs[1], oc = ws[1], k = ws[2];
  const std::size_t oh = deconv_output_size(xs[2], k, stride, padding, output_padding);
  const std::size_t ow = deconv_output_size(xs[3], k, stride, padding, output_padding);
  // The output plays the role of a conv input whose columns are the input pixels.
  detail::ConvGeom geom{oc, oh, ow, k, stride, padding, xs[2], xs[3]};
  const std::size_t rows = geom.rows(), cols = geom.cols();
  const std::size_t out_stride = oc * oh * ow;

  Tensor<T> out(Shape{n, oc, oh, ow});
  std::vector<T> col(rows * cols);
  CMapMat<T> wm(weight.value().data.data(), ic, rows);
  for (std::size_t i = 0; i < n; ++i) {
    MapMat<T> cm(col.data(), rows, cols);
    cm.noalias() = wm.transpose() * CMapMat<T>(x.value().data.data() + i * ic * cols, ic, cols);
    T* dst = out.data.data() + i * out_stride;
    for (std::size_t c = 0; c < oc; ++c) std::fill_n(dst + c * oh * ow, oh * ow, bias.value().data[c]);
    detail::col2im(col.data(), geom, dst);
  }

  return record(std::move(out), {x, weight, bias}, [geom, n, ic, oc, out_stride](Node<T>* o) {
    return [o, geom, n, ic, oc, out_stride]() {
      Node<T>* nx = o->inputs[0].get();
      Node<T>* nw = o->inputs[1].get();
      Node<T>* nb = o->inputs[2].get();
      const std::size_t rows = geom.rows(), cols = geom.cols();
      const std::size_t plane = geom.height * geom.width;
      CMapMat<T> wm(nw->value.data.data(), ic, rows);
      std::vector<T> gcol(rows * cols);
      for (std::size_t i = 0; i < n; ++i) {
        const T* g = o->value.grad.data() + i * out_stride;
        if (nb->requires_grad) {
          T* gb = grad_ptr(nb);
          for (std::size_t c = 0; c < oc; ++c) {
            T acc = 0;
            for (std::size_t p = 0; p < plane; ++p) acc += g[c * plane + p];
            gb[c] += acc;
          }
        }
        if (!nx->requires_grad && !nw->requires_grad) continue;
        detail::im2col(g, geom, gcol.data());
        CMapMat<T> gc(gcol.data(), rows, cols);
        if (nw->requires_grad) {
          MapMat<T> gw(grad_ptr(nw), ic, rows);
          gw.noalias() += CMapMat<T>(nx->value.data.data() + i * ic * cols, ic, cols) * gc.transpose();
        }
        if (nx->requires_grad) {
          MapMat<T> gx(grad_ptr(nx) + i * ic * cols, ic, cols);
          gx.noalias() += wm * gc;
        }
      }
    };
  });
}

namespace {

template <typename T>
void check_gdn_params(const Var<T>& x, const Var<T>& beta_raw, const Var<T>& gamma_raw, const char* op) {
  require_rank(x.shape(), 4, op, "input");
  const std::size_t c = x.shape()[1];
  if (beta_raw.shape() != Shape{c} || gamma_raw.shape() != Shape{c, c}) {
    throw DimensionError(std::string(op) + ": beta " + to_string(beta_raw.shape()) + " / gamma " +
                         to_string(gamma_raw.shape()) + " incompatible with input " + to_string(x.shape()));
  }
}

// inverse == false: y = x / sqrt(norm); inverse == true: y = x * sqrt(norm),
// with norm_c = beta_c + sum_j gamma_cj x_j^2 per spatial location.
template <typename T>
Var<T> gdn_impl(const Var<T>& x, const Var<T>& beta_raw, const Var<T>& gamma_raw, bool inverse) {
  const char* name = inverse ? "igdn" : "gdn";
  check_gdn_params(x, beta_raw, gamma_raw, name);
  const std::size_t n = x.shape()[0], c = x.shape()[1], plane = x.shape()[2] * x.shape()[3];

  RowMat<T> gamma(c, c);
  Eigen::Matrix<T, Eigen::Dynamic, 1> beta(c);
  for (std::size_t i = 0; i < c; ++i) {
    const T rb = beta_raw.value().data[i];
    beta(i) = rb * rb + static_cast<T>(kGdnBetaMin);
    for (std::size_t j = 0; j < c; ++j) {
      const T rg = gamma_raw.value().data[i * c + j];
      gamma(i, j) = rg * rg;
    }
  }

  Tensor<T> out(x.shape());
  std::vector<T> norms(n * c * plane);
  RowMat<T> sq(c, plane);
  for (std::size_t i = 0; i < n; ++i) {
    CMapMat<T> xm(x.value().data.data() + i * c * plane, c, plane);
    MapMat<T> nm(norms.data() + i * c * plane, c, plane);
    sq = xm.array().square();
    nm.noalias() = gamma * sq;
    nm.colwise() += beta;
    if (!nm.allFinite()) throw NumericError(std::string(name) + ": non-finite normalization denominator");
    MapMat<T> ym(out.data.data() + i * c * plane, c, plane);
    if (inverse) {
      ym = xm.array() * nm.array().sqrt();
    } else {
      ym = xm.array() / nm.array().sqrt();
    }
  }

  return record(std::move(out), {x, beta_raw, gamma_raw},
                [n, c, plane, inverse, gamma, norms = std::move(norms)](Node<T>* o) mutable {
                  return [o, n, c, plane, inverse, gamma = std::move(gamma), norms = std::move(norms)]() {
                    Node<T>* nx = o->inputs[0].get();
                    Node<T>* nb = o->inputs[1].get();
                    Node<T>* ng = o->inputs[2].get();
                    RowMat<T> t(c, plane), sq(c, plane);
                    Eigen::Matrix<T, Eigen::Dynamic, 1> gbeta = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(c);
                    RowMat<T> ggamma = RowMat<T>::Zero(c, c);
                    // d y_c / d norm_c = -x_c / (2 norm^{3/2}) (gdn) or x_c / (2 sqrt(norm)) (igdn).
                    const T half = inverse ? T(0.5) : T(-0.5);
                    for (std::size_t i = 0; i < n; ++i) {
                      CMapMat<T> xm(nx->value.data.data() + i * c * plane, c, plane);
                      CMapMat<T> nm(norms.data() + i * c * plane, c, plane);
                      CMapMat<T> g(o->value.grad.data() + i * c * plane, c, plane);
                      if (inverse) {
                        t = g.array() * xm.array() / nm.array().sqrt();
                      } else {
                        t = g.array() * xm.array() / (nm.array() * nm.array().sqrt());
                      }
                      if (nx->requires_grad) {
                        MapMat<T> gx(grad_ptr(nx) + i * c * plane, c, plane);
                        RowMat<T> mixed = gamma.transpose() * t;
                        if (inverse) {
                          gx.array() += g.array() * nm.array().sqrt() + xm.array() * mixed.array();
                        } else {
                          gx.array() += g.array() / nm.array().sqrt() - xm.array() * mixed.array();
                        }
                      }
                      if (nb->requires_grad) gbeta += half * t.rowwise().sum();
                      if (ng->requires_grad) {
                        sq = xm.array().square();
                        ggamma.noalias() += half * t * sq.transpose();
                      }
                    }
                    if (nb->requires_grad) {
                      T* gb = grad_ptr(nb);
                      for (std::size_t k = 0; k < c; ++k) gb[k] += gbeta(k) * T(2) * nb->value.data[k];
                    }
                    if (ng->requires_grad) {
                      T* gg = grad_ptr(ng);
                      for (std::size_t k = 0; k < c * c; ++k) {
                        gg[k] += ggamma.data()[k] * T(2) * ng->value.data[k];
                      }
                    }
                  };
                });
}

}  // namespace

template <typename T>
Var<T> gdn(const Var<T>& x, const Var<T>& beta_raw, const Var<T>& gamma_raw) {
  return gdn_impl(x, beta_raw, gamma_raw, false);
}

template <typename T>
Var<T> igdn(const Var<T>& x, const Var<T>& beta_raw, const Var<T>& gamma_raw) {
  return gdn_impl(x, beta_raw, gamma_raw, true);
}

#define PMC_INSTANTIATE_OPS(T)                                                                              \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                                                     \
  template Var<T> scale<T>(const Var<T>&, T);                                                               \
  template Var<T> relu<T>(const Var<T>&);                                                                   \
  template Var<T> sigmoid<T>(const Var<T>&);                                                                \
  template Var<T> log<T>(const Var<T>&);                                                                    \
  template Var<T> clamp_straight_through<T>(const Var<T>&, T, T);                                           \
  template Var<T> sum<T>(const Var<T>&);                                                                    \
  template Var<T> mean<T>(const Var<T>&);                                                                   \
  template Var<T> reshape<T>(const Var<T>&, Shape);                                                         \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> maxpool2d<T>(const Var<T>&);                                                              \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                   \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t);         \
  template Var<T> deconv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, std::size_t, std::size_t,        \
                              std::size_t);                                                                 \
  template Var<T> gdn<T>(const Var<T>&, const Var<T>&, const Var<T>&);                                      \
  template Var<T> igdn<T>(const Var<T>&, const Var<T>&, const Var<T>&);

PMC_INSTANTIATE_OPS(float)
PMC_INSTANTIATE_OPS(double)

}  // namespace pmc::nn
