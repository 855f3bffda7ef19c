#pragma once

// Mask-aware multi-attention: a streamlined inception trunk followed by a
// supervised single-channel mask attention and a global-context attention,
// whose outputs are summed into the detection feature map I.

#include <cmath>
#include <string>
#include <vector>

#include "acnet/box.hpp"
#include "acnet/nn.hpp"

namespace acnet {

/// Four parallel branches (1x1; 3x3; 1x3→3x1; 3x1→1x3), each to C/4 channels
/// with ReLU after every conv, concatenated and fused back to C by a 1x1 conv.
template <class T>
struct Inception {
  Conv<T> b1;
  Conv<T> b3;
  Conv<T> b13_a, b13_b;
  Conv<T> b31_a, b31_b;
  Conv<T> fuse;

  Inception() = default;
  Inception(std::size_t c, Rng& rng) {
    if (c % 4 != 0) detail::reject("Inception", std::to_string(c) + " channels are not divisible by 4");
    const std::size_t q = c / 4;
    b1 = Conv<T>(ConvSpec::pointwise(c, q), rng);
    b3 = Conv<T>(ConvSpec::square(c, q, 3), rng);
    b13_a = Conv<T>(ConvSpec{c, q, 1, 3, 1, 0, 1}, rng);
    b13_b = Conv<T>(ConvSpec{q, q, 3, 1, 1, 1, 0}, rng);
    b31_a = Conv<T>(ConvSpec{c, q, 3, 1, 1, 1, 0}, rng);
    b31_b = Conv<T>(ConvSpec{q, q, 1, 3, 1, 0, 1}, rng);
    fuse = Conv<T>(ConvSpec::pointwise(c, c), rng);
  }

  std::vector<Tensor<T>> branches(const Tensor<T>& x) const {
    return {relu(b1(x)), relu(b3(x)), relu(b13_b(relu(b13_a(x)))), relu(b31_b(relu(b31_a(x))))};
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.shape().c % 4 != 0) detail::reject("inception_forward", "channel count must be divisible by 4");
    return fuse(concat(branches(x)));
  }

  void collect(const std::string& prefix, TensorList<T>& out) const {
    b1.collect(prefix + ".b1x1", out);
    b3.collect(prefix + ".b3x3", out);
    b13_a.collect(prefix + ".b1x3a", out);
    b13_b.collect(prefix + ".b1x3b", out);
    b31_a.collect(prefix + ".b3x1a", out);
    b31_b.collect(prefix + ".b3x1b", out);
    fuse.collect(prefix + ".fuse", out);
  }
};

template <class T>
struct MaskAttentionOutput {
  Tensor<T> gated;
  Tensor<T> saliency;  // (N, 1, h, w), post-sigmoid
};

/// saliency = σ(conv1x1(ReLU(conv3x3(x)))); gated = x ⊗ saliency.
template <class T>
struct MaskAttention {
  Conv<T> hidden;  // 3x3, C -> max(1, C/4)
  Conv<T> logits;  // 1x1, -> 1

  MaskAttention() = default;
  MaskAttention(std::size_t c, Rng& rng)
      : hidden(ConvSpec::square(c, std::max<std::size_t>(1, c / 4), 3), rng),
        logits(ConvSpec::pointwise(std::max<std::size_t>(1, c / 4), 1), rng) {}

  MaskAttentionOutput<T> operator()(const Tensor<T>& x) const {
    Tensor<T> s = sigmoid(logits(relu(hidden(x))));
    return {mul_spatial(x, s), s};
  }

  void collect(const std::string& prefix, TensorList<T>& out) const {
    hidden.collect(prefix + ".hidden", out);
    logits.collect(prefix + ".logits", out);
  }
};

/// Global-context block: softmax attention over all positions pools a
/// C-vector, which passes through 1x1 (C/4) → layer norm → ReLU → 1x1 (C)
/// and is broadcast-added to x.
template <class T>
struct ContextAttention {
  Conv<T> key;    // 1x1, C -> 1, no bias (a constant shift cancels in the softmax)
  Conv<T> down;   // 1x1, C -> C/4
  Tensor<T> norm_gamma;
  Tensor<T> norm_beta;
  Conv<T> up;     // 1x1, C/4 -> C

  ContextAttention() = default;
  ContextAttention(std::size_t c, Rng& rng, std::size_t ratio = 4) {
    const std::size_t mid = std::max<std::size_t>(1, c / ratio);
    key = Conv<T>(ConvSpec::pointwise(c, 1, false), rng);
    down = Conv<T>(ConvSpec::pointwise(c, mid), rng);
    norm_gamma = Tensor<T>(Shape{1, mid, 1, 1}, T(1));
    norm_beta = Tensor<T>(Shape{1, mid, 1, 1}, T(0));
    norm_gamma.set_requires_grad();
    norm_beta.set_requires_grad();
    up = Conv<T>(ConvSpec::pointwise(mid, c), rng);
    up.zero();
  }

  Tensor<T> context(const Tensor<T>& x) const { return attention_pool(x, softmax_spatial(key(x))); }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> v = up(relu(layer_norm(down(context(x)), norm_gamma, norm_beta)));
    return add_channelwise(x, v);
  }

  void collect(const std::string& prefix, TensorList<T>& out) const {
    key.collect(prefix + ".key", out);
    down.collect(prefix + ".down", out);
    out.push_back({prefix + ".norm_gamma", norm_gamma, true});
    out.push_back({prefix + ".norm_beta", norm_beta, true});
    up.collect(prefix + ".up", out);
  }
};

template <class T>
struct MamaOutput {
  Tensor<T> features;  // I
  Tensor<T> saliency;
};

template <class T>
struct Mama {
  Inception<T> inception;
  MaskAttention<T> mask;
  ContextAttention<T> context;

  Mama() = default;
  Mama(std::size_t c, Rng& rng) : inception(c, rng), mask(c, rng), context(c, rng) {}

  /// t = inception(D); I = mask(t).gated + context(t).
  MamaOutput<T> operator()(const Tensor<T>& d) const {
    Tensor<T> t = inception(d);
    auto m = mask(t);
    return {add(m.gated, context(t)), m.saliency};
  }

  void collect(const std::string& prefix, TensorList<T>& out) const {
    inception.collect(prefix + ".inception", out);
    mask.collect(prefix + ".mask", out);
    context.collect(prefix + ".context", out);
  }
};

/// Binary map at feature resolution: cell (i, j) is 1 iff its center
/// ((j + 0.5)·stride, (i + 0.5)·stride) lies inside any box (closed bounds).
template <class T>
Tensor<T> rasterize_mask_label(const std::vector<Box>& boxes, std::size_t image_h, std::size_t image_w,
                               std::size_t stride) {
  detail::require(stride > 0 && image_h % stride == 0 && image_w % stride == 0, "rasterize_mask_label",
                  "stride must divide the image size");
  const std::size_t h = image_h / stride;
  const std::size_t w = image_w / stride;
  Tensor<T> mask(Shape{1, 1, h, w}, T(0));
  for (std::size_t i = 0; i < h; ++i) {
    const double cy = (static_cast<double>(i) + 0.5) * static_cast<double>(stride);
    for (std::size_t j = 0; j < w; ++j) {
      const double cx = (static_cast<double>(j) + 0.5) * static_cast<double>(stride);
      for (const Box& b : boxes) {
        if (b.contains(cx, cy)) {
          mask.at(0, 0, i, j) = T(1);
          break;
        }
      }
    }
  }
  return mask;
}

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy between saliency probabilities and a binary
/// label map, with probabilities clamped to [1e-7, 1 - 1e-7].
template <class T>
Tensor<T> attention_loss(const Tensor<T>& saliency, const Tensor<T>& label) {
  if (saliency.shape() != label.shape()) {
    detail::reject("attention_loss", "saliency " + saliency.shape().str() + " vs label " + label.shape().str());
  }
  const double lo = kProbabilityClamp;
  const double hi = 1.0 - kProbabilityClamp;
  const std::size_t count = saliency.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double p = std::clamp(static_cast<double>(saliency.data()[i]), lo, hi);
    const double y = label.data()[i];
    acc -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return detail::make_result<T>(Shape{1, 1, 1, 1}, {static_cast<T>(acc / static_cast<double>(count))}, {&saliency},
                                [saliency, label, lo, hi, count](Node<T>& self) {
                                  auto ds = detail::grad_sink(saliency);
                                  const double g = static_cast<double>(self.grad[0]) / static_cast<double>(count);
                                  for (std::size_t i = 0; i < count; ++i) {
                                    const double raw = saliency.data()[i];
                                    if (raw < lo || raw > hi) continue;
                                    const double y = label.data()[i];
                                    ds[i] += static_cast<T>(g * (-y / raw + (1.0 - y) / (1.0 - raw)));
                                  }
                                });
}

}  // namespace acnet
