#pragma once

// Differentiable operator set. Every function here is a pure map from input
// tensors to a fresh output tensor; backward closures accumulate into the
// inputs' gradient slots.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "acnet/error.hpp"
#include "acnet/tensor.hpp"

namespace acnet {

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

/// Weights and geometry of a 2-D cross-correlation (no kernel flip).
template <class T>
struct ConvParams {
  Tensor<T> weight;  // (Cout, Cin, kh, kw)
  Tensor<T> bias;    // (1, Cout, 1, 1) or undefined
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t dilation = 1;
};

/// Output extent along one axis; rejects geometries with no valid output.
inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t pad, std::size_t stride,
                                   std::size_t dilation) {
  detail::require(stride > 0 && dilation > 0, "conv2d", "stride and dilation must be positive");
  const std::size_t span = dilation * (k - 1) + 1;
  if (in + 2 * pad < span) {
    detail::reject("conv2d", "input extent " + std::to_string(in) + " with padding " + std::to_string(pad) +
                                 " is smaller than the dilated kernel extent " + std::to_string(span));
  }
  return (in + 2 * pad - span) / stride + 1;
}

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// Vectorized reductions over a Map peel according to the runtime address, so
// the rounding of a product would depend on where the heap put the buffer.
// Products and sums therefore run on owned, aligned copies.
template <class T>
RowMat<T> owned(const T* p, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

struct ConvGeom {
  std::size_t cin, h, w, kh, kw, oh, ow, stride, pad_h, pad_w, dil;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad_h == 0 && pad_w == 0; }
};

template <class T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const std::size_t p = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((ci * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki * g.dil) - static_cast<long>(g.pad_h);
          T* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj * g.dil) - static_cast<long>(g.pad_w);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? T(0) : src[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, const ConvGeom& g, T* dx) {
  const std::size_t p = g.oh * g.ow;
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((ci * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki * g.dil) - static_cast<long>(g.pad_h);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = dx + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj * g.dil) - static_cast<long>(g.pad_w);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const ConvParams<T>& p) {
  const Shape xs = x.shape();
  const Shape ws = p.weight.shape();
  if (ws.c != xs.c) {
    detail::reject("conv2d", "input has " + std::to_string(xs.c) + " channels, weight expects " + std::to_string(ws.c));
  }
  if (p.bias.defined() && p.bias.numel() != ws.n) detail::reject("conv2d", "bias length does not match Cout");

  detail::ConvGeom g{xs.c, xs.h, xs.w, ws.h, ws.w, 0, 0, p.stride, p.pad_h, p.pad_w, p.dilation};
  g.oh = conv_out_extent(xs.h, ws.h, p.pad_h, p.stride, p.dilation);
  g.ow = conv_out_extent(xs.w, ws.w, p.pad_w, p.stride, p.dilation);

  const std::size_t cout = ws.n;
  const std::size_t k = xs.c * ws.h * ws.w;
  const std::size_t np = g.oh * g.ow;
  const Shape os{xs.n, cout, g.oh, g.ow};

  std::vector<T> out(os.numel());
  detail::RowMat<T> col(k, np);
  const detail::RowMat<T> wmat = detail::owned(p.weight.data().data(), cout, k);
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* xn = x.data().data() + n * xs.c * xs.h * xs.w;
    if (g.pointwise()) {
      col = detail::ConstMatMap<T>(xn, k, np);
    } else {
      detail::im2col(xn, g, col.data());
    }
    detail::MatMap<T> on(out.data() + n * cout * np, cout, np);
    on.noalias() = wmat * col;
    if (p.bias.defined()) {
      for (std::size_t co = 0; co < cout; ++co) on.row(co).array() += p.bias.data()[co];
    }
  }

  Tensor<T> weight = p.weight;
  Tensor<T> bias = p.bias;
  return detail::make_result<T>(
      os, std::move(out), {&x, &p.weight, p.bias.defined() ? &p.bias : nullptr},
      [x, weight, bias, g, k, np, cout](Node<T>& self) {
        const Shape xs = x.shape();
        auto dx = detail::grad_sink(x);
        auto dw = detail::grad_sink(weight);
        auto db = detail::grad_sink(bias);
        const detail::RowMat<T> wmat = detail::owned(weight.data().data(), cout, k);
        detail::RowMat<T> col(k, np), dcol(k, np);
        for (std::size_t n = 0; n < xs.n; ++n) {
          const detail::RowMat<T> dy = detail::owned(self.grad.data() + n * cout * np, cout, np);
          if (!db.empty()) {
            for (std::size_t co = 0; co < cout; ++co) db[co] += dy.row(co).sum();
          }
          const T* xn = x.data().data() + n * xs.c * xs.h * xs.w;
          if (!dw.empty()) {
            if (g.pointwise()) {
              col = detail::ConstMatMap<T>(xn, k, np);
            } else {
              detail::im2col(xn, g, col.data());
            }
            detail::MatMap<T> dwm(dw.data(), cout, k);
            dwm.noalias() += dy * col.transpose();
          }
          if (!dx.empty()) {
            T* dxn = dx.data() + n * xs.c * xs.h * xs.w;
            dcol.noalias() = wmat.transpose() * dy;
            if (g.pointwise()) {
              detail::MatMap<T>(dxn, k, np) += dcol;
            } else {
              detail::col2im_add(dcol.data(), g, dxn);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

enum class BnMode { train, infer };

template <class T>
struct BatchNorm {
  Tensor<T> gamma;         // (1, C, 1, 1), trainable
  Tensor<T> beta;          // (1, C, 1, 1), trainable
  Tensor<T> running_mean;  // (1, C, 1, 1)
  Tensor<T> running_var;   // (1, C, 1, 1)
  T eps = T(1e-5);
  T momentum = T(0.1);
  BnMode mode = BnMode::train;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t channels)
      : gamma(Shape{1, channels, 1, 1}, T(1)),
        beta(Shape{1, channels, 1, 1}, T(0)),
        running_mean(Shape{1, channels, 1, 1}, T(0)),
        running_var(Shape{1, channels, 1, 1}, T(1)) {
    gamma.set_requires_grad();
    beta.set_requires_grad();
  }

  std::size_t channels() const { return gamma.numel(); }
};

/// Per-channel normalization. In train mode the batch statistics are used and
/// the running statistics are updated in place (unbiased variance).
template <class T>
Tensor<T> batchnorm(const Tensor<T>& x, BatchNorm<T>& s) {
  const Shape xs = x.shape();
  if (xs.c != s.channels()) {
    detail::reject("batchnorm", "input has " + std::to_string(xs.c) + " channels, state has " +
                                    std::to_string(s.channels()));
  }
  const std::size_t plane = xs.plane();
  const std::size_t m = xs.n * plane;
  std::vector<T> mean(xs.c), inv_std(xs.c);
  const auto xd = x.data();

  if (s.mode == BnMode::train) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      double sum = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* p = xd.data() + (n * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(m);
      double sq = 0.0;
      for (std::size_t n = 0; n < xs.n; ++n) {
        const T* p = xd.data() + (n * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) sq += (p[i] - mu) * (p[i] - mu);
      }
      const double var = sq / static_cast<double>(m);
      mean[c] = static_cast<T>(mu);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(s.eps)));
      const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
      auto rm = s.running_mean.data();
      auto rv = s.running_var.data();
      rm[c] = static_cast<T>((1.0 - s.momentum) * rm[c] + s.momentum * mu);
      rv[c] = static_cast<T>((1.0 - s.momentum) * rv[c] + s.momentum * unbiased);
    }
  } else {
    for (std::size_t c = 0; c < xs.c; ++c) {
      mean[c] = s.running_mean.data()[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(s.running_var.data()[c]) + s.eps));
    }
  }

  std::vector<T> out(xs.numel());
  const auto g = s.gamma.data();
  const auto b = s.beta.data();
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      const std::size_t base = (n * xs.c + c) * plane;
      const T scale = g[c] * inv_std[c];
      const T shift = b[c] - mean[c] * scale;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = xd[base + i] * scale + shift;
    }
  }

  const bool batch_stats = s.mode == BnMode::train;
  Tensor<T> gamma = s.gamma;
  Tensor<T> beta = s.beta;
  return detail::make_result<T>(
      xs, std::move(out), {&x, &s.gamma, &s.beta},
      [x, gamma, beta, mean, inv_std, batch_stats, plane, m](Node<T>& self) {
        const Shape xs = x.shape();
        auto dx = detail::grad_sink(x);
        auto dg = detail::grad_sink(gamma);
        auto db = detail::grad_sink(beta);
        const auto xd = x.data();
        const auto dy = std::span<const T>(self.grad);
        for (std::size_t c = 0; c < xs.c; ++c) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (std::size_t n = 0; n < xs.n; ++n) {
            const std::size_t base = (n * xs.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double xhat = (xd[base + i] - mean[c]) * inv_std[c];
              sum_dy += dy[base + i];
              sum_dy_xhat += dy[base + i] * xhat;
            }
          }
          if (!db.empty()) db[c] += static_cast<T>(sum_dy);
          if (!dg.empty()) dg[c] += static_cast<T>(sum_dy_xhat);
          if (dx.empty()) continue;
          const double gs = static_cast<double>(gamma.data()[c]) * inv_std[c];
          const double md = static_cast<double>(m);
          for (std::size_t n = 0; n < xs.n; ++n) {
            const std::size_t base = (n * xs.c + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              if (batch_stats) {
                const double xhat = (xd[base + i] - mean[c]) * inv_std[c];
                dx[base + i] += static_cast<T>(gs * (dy[base + i] - sum_dy / md - xhat * sum_dy_xhat / md));
              } else {
                dx[base + i] += static_cast<T>(gs * dy[base + i]);
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

enum class Activation { relu, sigmoid };

namespace detail {
// Kept inside the open interval: saturated values are pulled to the nearest
// representable neighbours of 0 and 1.
template <class T>
T sigmoid_scalar(T v) {
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  if (v >= T(0)) return std::min(hi, T(1) / (T(1) + std::exp(-v)));
  const T e = std::exp(v);
  return std::max(lo, e / (T(1) + e));
}
}  // namespace detail

template <class T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  std::vector<T> out(x.numel());
  const auto xd = x.data();
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid_scalar(xd[i]);
  }
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [x, kind](Node<T>& self) {
    auto dx = detail::grad_sink(x);
    const auto xd = x.data();
    if (kind == Activation::relu) {
      for (std::size_t i = 0; i < dx.size(); ++i) {
        if (xd[i] > T(0)) dx[i] += self.grad[i];
      }
    } else {
      for (std::size_t i = 0; i < dx.size(); ++i) {
        const T y = self.data[i];
        dx[i] += self.grad[i] * y * (T(1) - y);
      }
    }
  });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return activation(x, Activation::relu);
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return activation(x, Activation::sigmoid);
}

// ---------------------------------------------------------------------------
// Resampling and pooling
// ---------------------------------------------------------------------------

namespace detail {

struct LerpTap {
  std::size_t i0, i1;
  double frac;
};

// Half-pixel centers: src = (dst + 0.5) * in / out - 0.5, clamped to [0, in-1].
inline std::vector<LerpTap> half_pixel_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    std::size_t i0 = static_cast<std::size_t>(src);
    if (i0 >= in - 1) {
      taps[d] = {in - 1, in - 1, 0.0};
      continue;
    }
    taps[d] = {i0, i0 + 1, src - static_cast<double>(i0)};
  }
  return taps;
}

struct PoolWindow {
  std::size_t begin, end;
};

// Adaptive windows: [floor(i*in/out), ceil((i+1)*in/out)).
inline std::vector<PoolWindow> adaptive_windows(std::size_t in, std::size_t out) {
  std::vector<PoolWindow> win(out);
  for (std::size_t i = 0; i < out; ++i) {
    win[i].begin = (i * in) / out;
    win[i].end = ((i + 1) * in + out - 1) / out;
  }
  return win;
}

}  // namespace detail

template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  detail::require(out_h >= 1 && out_w >= 1, "resize_bilinear", "output size must be at least 1x1");
  const Shape xs = x.shape();
  const Shape os{xs.n, xs.c, out_h, out_w};
  const auto ty = detail::half_pixel_taps(xs.h, out_h);
  const auto tx = detail::half_pixel_taps(xs.w, out_w);
  std::vector<T> out(os.numel());
  const auto xd = x.data();
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* src = xd.data() + nc * xs.plane();
    T* dst = out.data() + nc * os.plane();
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[ox];
        const double top = src[a.i0 * xs.w + b.i0] * (1.0 - b.frac) + src[a.i0 * xs.w + b.i1] * b.frac;
        const double bot = src[a.i1 * xs.w + b.i0] * (1.0 - b.frac) + src[a.i1 * xs.w + b.i1] * b.frac;
        dst[oy * out_w + ox] = static_cast<T>(top * (1.0 - a.frac) + bot * a.frac);
      }
    }
  }
  return detail::make_result<T>(os, std::move(out), {&x}, [x, ty, tx, out_h, out_w](Node<T>& self) {
    const Shape xs = x.shape();
    auto dx = detail::grad_sink(x);
    for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
      T* d = dx.data() + nc * xs.plane();
      const T* g = self.grad.data() + nc * out_h * out_w;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[oy];
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[ox];
          const double v = g[oy * out_w + ox];
          d[a.i0 * xs.w + b.i0] += static_cast<T>(v * (1.0 - a.frac) * (1.0 - b.frac));
          d[a.i0 * xs.w + b.i1] += static_cast<T>(v * (1.0 - a.frac) * b.frac);
          d[a.i1 * xs.w + b.i0] += static_cast<T>(v * a.frac * (1.0 - b.frac));
          d[a.i1 * xs.w + b.i1] += static_cast<T>(v * a.frac * b.frac);
        }
      }
    }
  });
}

enum class PoolKind { adaptive_avg, global_avg };

template <class T>
Tensor<T> pool(const Tensor<T>& x, PoolKind kind, std::size_t out_h = 1, std::size_t out_w = 1) {
  const Shape xs = x.shape();
  if (kind == PoolKind::global_avg) out_h = out_w = 1;
  detail::require(out_h >= 1 && out_w >= 1 && out_h <= xs.h && out_w <= xs.w, "pool",
                  "adaptive output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                      " must be non-empty and no larger than the input " + xs.str());
  const Shape os{xs.n, xs.c, out_h, out_w};
  const auto wy = detail::adaptive_windows(xs.h, out_h);
  const auto wx = detail::adaptive_windows(xs.w, out_w);
  std::vector<T> out(os.numel());
  const auto xd = x.data();
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* src = xd.data() + nc * xs.plane();
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        double sum = 0.0;
        for (std::size_t y = wy[oy].begin; y < wy[oy].end; ++y) {
          for (std::size_t xx = wx[ox].begin; xx < wx[ox].end; ++xx) sum += src[y * xs.w + xx];
        }
        const double count = static_cast<double>((wy[oy].end - wy[oy].begin) * (wx[ox].end - wx[ox].begin));
        out[nc * os.plane() + oy * out_w + ox] = static_cast<T>(sum / count);
      }
    }
  }
  return detail::make_result<T>(os, std::move(out), {&x}, [x, wy, wx, out_h, out_w](Node<T>& self) {
    const Shape xs = x.shape();
    auto dx = detail::grad_sink(x);
    for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
      T* d = dx.data() + nc * xs.plane();
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const double count =
              static_cast<double>((wy[oy].end - wy[oy].begin) * (wx[ox].end - wx[ox].begin));
          const T g = static_cast<T>(self.grad[nc * out_h * out_w + oy * out_w + ox] / count);
          for (std::size_t y = wy[oy].begin; y < wy[oy].end; ++y) {
            for (std::size_t xx = wx[ox].begin; xx < wx[ox].end; ++xx) d[y * xs.w + xx] += g;
          }
        }
      }
    }
  });
}

template <class T>
Tensor<T> adaptive_avg_pool(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
  return pool(x, PoolKind::adaptive_avg, out_h, out_w);
}

template <class T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  return pool(x, PoolKind::global_avg);
}

// ---------------------------------------------------------------------------
// Fully connected
// ---------------------------------------------------------------------------

/// y = W·x + b per batch row. `x` is flattened to N×(C·H·W); `weight` is
/// (M, K, 1, 1); `bias` is (1, M, 1, 1) or undefined. Output is (N, M, 1, 1).
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias = {}) {
  const Shape xs = x.shape();
  const std::size_t k = xs.c * xs.h * xs.w;
  const std::size_t m = weight.shape().n;
  if (weight.shape().c * weight.shape().h * weight.shape().w != k) {
    detail::reject("linear", "weight expects " + std::to_string(weight.numel() / std::max<std::size_t>(m, 1)) +
                                 " inputs, got " + std::to_string(k));
  }
  if (bias.defined() && bias.numel() != m) detail::reject("linear", "bias length does not match output size");
  const Shape os{xs.n, m, 1, 1};
  std::vector<T> out(os.numel());
  const detail::RowMat<T> wm = detail::owned(weight.data().data(), m, k);
  const detail::RowMat<T> xm = detail::owned(x.data().data(), xs.n, k);
  detail::MatMap<T> om(out.data(), xs.n, m);
  om.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t j = 0; j < m; ++j) out[n * m + j] += bias.data()[j];
    }
  }
  return detail::make_result<T>(os, std::move(out), {&x, &weight, bias.defined() ? &bias : nullptr},
                                [x, weight, bias, k, m](Node<T>& self) {
                                  const std::size_t n = x.shape().n;
                                  const detail::RowMat<T> dy = detail::owned(self.grad.data(), n, m);
                                  if (auto dx = detail::grad_sink(x); !dx.empty()) {
                                    detail::MatMap<T>(dx.data(), n, k).noalias() +=
                                        dy * detail::owned(weight.data().data(), m, k);
                                  }
                                  if (auto dw = detail::grad_sink(weight); !dw.empty()) {
                                    detail::MatMap<T>(dw.data(), m, k).noalias() +=
                                        dy.transpose() * detail::owned(x.data().data(), n, k);
                                  }
                                  if (auto db = detail::grad_sink(bias); !db.empty()) {
                                    for (std::size_t j = 0; j < m; ++j) db[j] += dy.col(j).sum();
                                  }
                                });
}

// ---------------------------------------------------------------------------
// Elementwise combination, concatenation, split
// ---------------------------------------------------------------------------

enum class Elementwise { sum, product };

template <class T>
Tensor<T> elementwise(const Tensor<T>& a, const Tensor<T>& b, Elementwise kind) {
  if (a.shape() != b.shape()) {
    detail::reject("elementwise", "shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  std::vector<T> out(a.numel());
  const auto ad = a.data();
  const auto bd = b.data();
  if (kind == Elementwise::sum) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  }
  return detail::make_result<T>(a.shape(), std::move(out), {&a, &b}, [a, b, kind](Node<T>& self) {
    auto da = detail::grad_sink(a);
    auto db = detail::grad_sink(b);
    if (kind == Elementwise::sum) {
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i];
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += self.grad[i];
    } else {
      const auto ad = a.data();
      const auto bd = b.data();
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += self.grad[i] * bd[i];
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += self.grad[i] * ad[i];
    }
  });
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Elementwise::sum);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return elementwise(a, b, Elementwise::product);
}

/// Channel-axis concatenation.
template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  detail::require(!parts.empty(), "concat", "no inputs");
  const Shape first = parts.front().shape();
  std::size_t channels = 0;
  for (const auto& p : parts) {
    const Shape s = p.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      detail::reject("concat", "non-channel extents differ: " + s.str() + " vs " + first.str());
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  const std::size_t plane = first.plane();
  std::vector<T> out(os.numel());
  for (std::size_t n = 0; n < first.n; ++n) {
    std::size_t c0 = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.shape().c * plane;
      const T* src = p.data().data() + n * len;
      std::copy(src, src + len, out.data() + (n * channels + c0) * plane);
      c0 += p.shape().c;
    }
  }
  return detail::make_result<T>(os, std::move(out), parts, [parts, channels, plane](Node<T>& self) {
    const std::size_t batch = self.shape.n;
    std::size_t c0 = 0;
    for (const auto& p : parts) {
      const std::size_t len = p.shape().c * plane;
      if (auto dp = detail::grad_sink(p); !dp.empty()) {
        for (std::size_t n = 0; n < batch; ++n) {
          const T* g = self.grad.data() + (n * channels + c0) * plane;
          T* d = dp.data() + n * len;
          for (std::size_t i = 0; i < len; ++i) d[i] += g[i];
        }
      }
      c0 += p.shape().c;
    }
  });
}

/// Channel slice [c0, c0 + count).
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t c0, std::size_t count) {
  const Shape xs = x.shape();
  detail::require(c0 + count <= xs.c && count > 0, "slice_channels", "channel range out of bounds");
  const Shape os{xs.n, count, xs.h, xs.w};
  const std::size_t plane = xs.plane();
  std::vector<T> out(os.numel());
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* src = x.data().data() + (n * xs.c + c0) * plane;
    std::copy(src, src + count * plane, out.data() + n * count * plane);
  }
  return detail::make_result<T>(os, std::move(out), {&x}, [x, c0, count, plane](Node<T>& self) {
    const Shape xs = x.shape();
    auto dx = detail::grad_sink(x);
    for (std::size_t n = 0; n < xs.n; ++n) {
      T* d = dx.data() + (n * xs.c + c0) * plane;
      const T* g = self.grad.data() + n * count * plane;
      for (std::size_t i = 0; i < count * plane; ++i) d[i] += g[i];
    }
  });
}

/// Splits the channel axis into `groups` equal parts.
template <class T>
std::vector<Tensor<T>> split(const Tensor<T>& x, std::size_t groups) {
  const Shape xs = x.shape();
  if (groups == 0 || xs.c % groups != 0) {
    detail::reject("split", std::to_string(xs.c) + " channels are not divisible into " + std::to_string(groups) +
                                " groups");
  }
  const std::size_t per = xs.c / groups;
  std::vector<Tensor<T>> parts;
  parts.reserve(groups);
  for (std::size_t g = 0; g < groups; ++g) parts.push_back(slice_channels(x, g * per, per));
  return parts;
}

// ---------------------------------------------------------------------------
// Per-channel / per-pixel broadcasts
// ---------------------------------------------------------------------------

/// x[n,c,:,:] * s[n,c]; `s` is (N, C, 1, 1).
template <class T>
Tensor<T> mul_channelwise(const Tensor<T>& x, const Tensor<T>& s) {
  const Shape xs = x.shape();
  if (s.shape() != Shape{xs.n, xs.c, 1, 1}) {
    detail::reject("mul_channelwise", "scale shape " + s.shape().str() + " does not broadcast over " + xs.str());
  }
  const std::size_t plane = xs.plane();
  std::vector<T> out(xs.numel());
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const T f = s.data()[nc];
    for (std::size_t i = 0; i < plane; ++i) out[nc * plane + i] = x.data()[nc * plane + i] * f;
  }
  return detail::make_result<T>(xs, std::move(out), {&x, &s}, [x, s, plane](Node<T>& self) {
    auto dx = detail::grad_sink(x);
    auto ds = detail::grad_sink(s);
    for (std::size_t nc = 0; nc < s.numel(); ++nc) {
      const T f = s.data()[nc];
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const T g = self.grad[nc * plane + i];
        if (!dx.empty()) dx[nc * plane + i] += g * f;
        acc += g * x.data()[nc * plane + i];
      }
      if (!ds.empty()) ds[nc] += static_cast<T>(acc);
    }
  });
}

/// x[n,c,h,w] * m[n,0,h,w]; `m` is (N, 1, H, W).
template <class T>
Tensor<T> mul_spatial(const Tensor<T>& x, const Tensor<T>& m) {
  const Shape xs = x.shape();
  if (m.shape() != Shape{xs.n, 1, xs.h, xs.w}) {
    detail::reject("mul_spatial", "map shape " + m.shape().str() + " does not broadcast over " + xs.str());
  }
  const std::size_t plane = xs.plane();
  std::vector<T> out(xs.numel());
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* mp = m.data().data() + n * plane;
    for (std::size_t c = 0; c < xs.c; ++c) {
      const std::size_t base = (n * xs.c + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = x.data()[base + i] * mp[i];
    }
  }
  return detail::make_result<T>(xs, std::move(out), {&x, &m}, [x, m, plane](Node<T>& self) {
    const Shape xs = x.shape();
    auto dx = detail::grad_sink(x);
    auto dm = detail::grad_sink(m);
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* mp = m.data().data() + n * plane;
      for (std::size_t c = 0; c < xs.c; ++c) {
        const std::size_t base = (n * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const T g = self.grad[base + i];
          if (!dx.empty()) dx[base + i] += g * mp[i];
          if (!dm.empty()) dm[n * plane + i] += g * x.data()[base + i];
        }
      }
    }
  });
}

/// x[n,c,:,:] + v[n,c]; `v` is (N, C, 1, 1).
template <class T>
Tensor<T> add_channelwise(const Tensor<T>& x, const Tensor<T>& v) {
  const Shape xs = x.shape();
  if (v.shape() != Shape{xs.n, xs.c, 1, 1}) {
    detail::reject("add_channelwise", "vector shape " + v.shape().str() + " does not broadcast over " + xs.str());
  }
  const std::size_t plane = xs.plane();
  std::vector<T> out(xs.numel());
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    for (std::size_t i = 0; i < plane; ++i) out[nc * plane + i] = x.data()[nc * plane + i] + v.data()[nc];
  }
  return detail::make_result<T>(xs, std::move(out), {&x, &v}, [x, v, plane](Node<T>& self) {
    auto dx = detail::grad_sink(x);
    auto dv = detail::grad_sink(v);
    for (std::size_t nc = 0; nc < v.numel(); ++nc) {
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) {
        const T g = self.grad[nc * plane + i];
        if (!dx.empty()) dx[nc * plane + i] += g;
        acc += g;
      }
      if (!dv.empty()) dv[nc] += static_cast<T>(acc);
    }
  });
}

// ---------------------------------------------------------------------------
// Global-context helpers
// ---------------------------------------------------------------------------

/// Softmax over all H·W positions of each (n, c) plane.
template <class T>
Tensor<T> softmax_spatial(const Tensor<T>& x) {
  const Shape xs = x.shape();
  const std::size_t plane = xs.plane();
  std::vector<T> out(xs.numel());
  for (std::size_t nc = 0; nc < xs.n * xs.c; ++nc) {
    const T* src = x.data().data() + nc * plane;
    T mx = *std::max_element(src, src + plane);
    double z = 0.0;
    for (std::size_t i = 0; i < plane; ++i) z += std::exp(static_cast<double>(src[i] - mx));
    for (std::size_t i = 0; i < plane; ++i) {
      out[nc * plane + i] = static_cast<T>(std::exp(static_cast<double>(src[i] - mx)) / z);
    }
  }
  return detail::make_result<T>(xs, std::move(out), {&x}, [x, plane](Node<T>& self) {
    auto dx = detail::grad_sink(x);
    for (std::size_t nc = 0; nc < self.shape.n * self.shape.c; ++nc) {
      const T* y = self.data.data() + nc * plane;
      const T* g = self.grad.data() + nc * plane;
      double dot = 0.0;
      for (std::size_t i = 0; i < plane; ++i) dot += static_cast<double>(y[i]) * g[i];
      for (std::size_t i = 0; i < plane; ++i) dx[nc * plane + i] += static_cast<T>(y[i] * (g[i] - dot));
    }
  });
}

/// out[n,c] = Σ_p weights[n,0,p] · x[n,c,p]; weights is (N, 1, H, W).
template <class T>
Tensor<T> attention_pool(const Tensor<T>& x, const Tensor<T>& weights) {
  const Shape xs = x.shape();
  if (weights.shape() != Shape{xs.n, 1, xs.h, xs.w}) {
    detail::reject("attention_pool", "weights " + weights.shape().str() + " do not match " + xs.str());
  }
  const std::size_t plane = xs.plane();
  const Shape os{xs.n, xs.c, 1, 1};
  std::vector<T> out(os.numel());
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* a = weights.data().data() + n * plane;
    for (std::size_t c = 0; c < xs.c; ++c) {
      const T* p = x.data().data() + (n * xs.c + c) * plane;
      double acc = 0.0;
      for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(a[i]) * p[i];
      out[n * xs.c + c] = static_cast<T>(acc);
    }
  }
  return detail::make_result<T>(os, std::move(out), {&x, &weights}, [x, weights, plane](Node<T>& self) {
    const Shape xs = x.shape();
    auto dx = detail::grad_sink(x);
    auto da = detail::grad_sink(weights);
    for (std::size_t n = 0; n < xs.n; ++n) {
      const T* a = weights.data().data() + n * plane;
      for (std::size_t c = 0; c < xs.c; ++c) {
        const T g = self.grad[n * xs.c + c];
        const std::size_t base = (n * xs.c + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          if (!dx.empty()) dx[base + i] += g * a[i];
          if (!da.empty()) da[n * plane + i] += g * x.data()[base + i];
        }
      }
    }
  });
}

/// Per-sample normalization over all C·H·W entries followed by a per-channel
/// affine map; gamma/beta are (1, C, 1, 1).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  const Shape xs = x.shape();
  if (gamma.numel() != xs.c || beta.numel() != xs.c) detail::reject("layer_norm", "affine size mismatch");
  const std::size_t len = xs.c * xs.plane();
  std::vector<T> mean(xs.n), inv_std(xs.n), out(xs.numel());
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* p = x.data().data() + n * len;
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += p[i];
    const double mu = s / static_cast<double>(len);
    double sq = 0.0;
    for (std::size_t i = 0; i < len; ++i) sq += (p[i] - mu) * (p[i] - mu);
    mean[n] = static_cast<T>(mu);
    inv_std[n] = static_cast<T>(1.0 / std::sqrt(sq / static_cast<double>(len) + eps));
    for (std::size_t c = 0; c < xs.c; ++c) {
      for (std::size_t i = 0; i < xs.plane(); ++i) {
        const std::size_t k = c * xs.plane() + i;
        out[n * len + k] = (p[k] - mean[n]) * inv_std[n] * gamma.data()[c] + beta.data()[c];
      }
    }
  }
  return detail::make_result<T>(
      xs, std::move(out), {&x, &gamma, &beta}, [x, gamma, beta, mean, inv_std, len](Node<T>& self) {
        const Shape xs = x.shape();
        auto dx = detail::grad_sink(x);
        auto dg = detail::grad_sink(gamma);
        auto db = detail::grad_sink(beta);
        for (std::size_t n = 0; n < xs.n; ++n) {
          const T* p = x.data().data() + n * len;
          const T* g = self.grad.data() + n * len;
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (std::size_t c = 0; c < xs.c; ++c) {
            for (std::size_t i = 0; i < xs.plane(); ++i) {
              const std::size_t k = c * xs.plane() + i;
              const double xhat = (p[k] - mean[n]) * inv_std[n];
              const double dxhat = static_cast<double>(g[k]) * gamma.data()[c];
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
              if (!dg.empty()) dg[c] += static_cast<T>(g[k] * xhat);
              if (!db.empty()) db[c] += g[k];
            }
          }
          if (dx.empty()) continue;
          const double ld = static_cast<double>(len);
          for (std::size_t c = 0; c < xs.c; ++c) {
            for (std::size_t i = 0; i < xs.plane(); ++i) {
              const std::size_t k = c * xs.plane() + i;
              const double xhat = (p[k] - mean[n]) * inv_std[n];
              const double dxhat = static_cast<double>(g[k]) * gamma.data()[c];
              dx[n * len + k] +=
                  static_cast<T>(inv_std[n] * (dxhat - sum_dxhat / ld - xhat * sum_dxhat_xhat / ld));
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Reductions and scalar helpers
// ---------------------------------------------------------------------------

/// Σ_i x_i · weights_i, as a 1×1×1×1 tensor. Empty weights mean all ones.
template <class T>
Tensor<T> weighted_sum(const Tensor<T>& x, std::vector<T> weights = {}) {
  if (!weights.empty() && weights.size() != x.numel()) detail::reject("weighted_sum", "weight count mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) acc += static_cast<double>(x.data()[i]) * (weights.empty() ? T(1) : weights[i]);
  return detail::make_result<T>(Shape{1, 1, 1, 1}, {static_cast<T>(acc)}, {&x},
                                [x, weights = std::move(weights)](Node<T>& self) {
                                  auto dx = detail::grad_sink(x);
                                  const T g = self.grad[0];
                                  for (std::size_t i = 0; i < dx.size(); ++i) {
                                    dx[i] += g * (weights.empty() ? T(1) : weights[i]);
                                  }
                                });
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  return weighted_sum(x);
}

/// x · factor with a constant factor.
template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  return detail::make_result<T>(x.shape(), std::move(out), {&x}, [x, factor](Node<T>& self) {
    auto dx = detail::grad_sink(x);
    for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += self.grad[i] * factor;
  });
}

}  // namespace acnet
