#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "acnet/ops.hpp"

namespace acnet {

using Rng = std::mt19937_64;

/// Named handle to a model tensor. Trainable entries receive SGD updates;
/// the rest (BN running statistics) are only persisted.
template <class T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <class T>
using TensorList = std::vector<NamedTensor<T>>;

/// Uniform(-bound, bound) with bound = sqrt(6 / fan_in), deterministic for a given RNG state.
template <class T>
Tensor<T> fan_in_uniform(Shape shape, std::size_t fan_in, Rng& rng, double gain = 1.0) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(shape.numel());
  for (auto& e : v) e = static_cast<T>(dist(rng));
  Tensor<T> t(shape, std::move(v));
  t.set_requires_grad();
  return t;
}

struct ConvSpec {
  std::size_t in = 1;
  std::size_t out = 1;
  std::size_t kh = 3;
  std::size_t kw = 3;
  std::size_t stride = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;
  std::size_t dilation = 1;
  bool bias = true;
  double gain = 1.0;

  static ConvSpec square(std::size_t in, std::size_t out, std::size_t k, std::size_t stride = 1,
                         std::size_t dilation = 1, bool bias = true) {
    const std::size_t pad = dilation * (k - 1) / 2;
    return {in, out, k, k, stride, pad, pad, dilation, bias};
  }
  static ConvSpec pointwise(std::size_t in, std::size_t out, bool bias = true) { return {in, out, 1, 1, 1, 0, 0, 1, bias}; }
};

/// Convolution layer owning its parameters.
template <class T>
struct Conv {
  ConvParams<T> p;

  Conv() = default;
  Conv(const ConvSpec& s, Rng& rng) {
    p.weight = fan_in_uniform<T>(Shape{s.out, s.in, s.kh, s.kw}, s.in * s.kh * s.kw, rng, s.gain);
    if (s.bias) {
      p.bias = Tensor<T>(Shape{1, s.out, 1, 1}, T(0));
      p.bias.set_requires_grad();
    }
    p.stride = s.stride;
    p.pad_h = s.pad_h;
    p.pad_w = s.pad_w;
    p.dilation = s.dilation;
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, p); }

  void collect(const std::string& prefix, TensorList<T>& out) const {
    out.push_back({prefix + ".weight", p.weight, true});
    if (p.bias.defined()) out.push_back({prefix + ".bias", p.bias, true});
  }

  void zero() {
    std::fill(p.weight.values().begin(), p.weight.values().end(), T(0));
    if (p.bias.defined()) std::fill(p.bias.values().begin(), p.bias.values().end(), T(0));
  }
};

template <class T>
void collect_bn(const BatchNorm<T>& bn, const std::string& prefix, TensorList<T>& out) {
  out.push_back({prefix + ".gamma", bn.gamma, true});
  out.push_back({prefix + ".beta", bn.beta, true});
  out.push_back({prefix + ".running_mean", bn.running_mean, false});
  out.push_back({prefix + ".running_var", bn.running_var, false});
}

/// 3×3 conv (no bias) → BN → ReLU.
template <class T>
struct ConvBnRelu {
  Conv<T> conv;
  BatchNorm<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
      : conv(ConvSpec::square(in, out, 3, stride, 1, false), rng), bn(out) {}

  Tensor<T> operator()(const Tensor<T>& x) { return relu(batchnorm(conv(x), bn)); }

  void collect(const std::string& prefix, TensorList<T>& out) const {
    conv.collect(prefix + ".conv", out);
    collect_bn(bn, prefix + ".bn", out);
  }
};

template <class T>
std::size_t count_trainable(const TensorList<T>& list) {
  std::size_t total = 0;
  for (const auto& e : list) {
    if (e.trainable) total += e.tensor.numel();
  }
  return total;
}

}  // namespace acnet
