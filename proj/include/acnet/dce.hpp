#pragma once

// Dynamic context enhancement: L2 and L4 are resized to L3's geometry, each
// level runs three dilated 3x3 branches (d = 1, 2, 3), an SE-style channel
// attention weighs the concatenated branches, and the weighted branches are
// summed back to the level's channel count. The three level outputs are summed.

#include <array>
#include <string>
#include <vector>

#include "acnet/backbone.hpp"

namespace acnet {

inline constexpr std::array<std::size_t, 3> kDilationRates{1, 2, 3};
inline constexpr std::size_t kMinDilatedExtent = 7;

struct DceConfig {
  std::size_t channels_l2 = 32;
  std::size_t channels_l3 = 64;
  std::size_t channels_l4 = 128;
  std::size_t reduction = 16;

  /// Reduction after clamping to the concatenated width.
  std::size_t effective_reduction() const { return std::min(reduction, 3 * channels_l3); }
};

/// Weights for one level i.
template <class T>
struct DceLevel {
  std::size_t level = 3;
  std::optional<Conv<T>> resize;      // absent for level 3
  std::array<Conv<T>, 3> branches;    // dilation 1, 2, 3; pad = dilation
  Tensor<T> w1;                       // (C/r, 3C, 1, 1)
  Tensor<T> w2;                       // (3C, C/r, 1, 1)

  void collect(const std::string& prefix, TensorList<T>& out, bool attention) const {
    if (resize) resize->collect(prefix + ".resize", out);
    if (!attention) return;
    for (std::size_t b = 0; b < 3; ++b) branches[b].collect(prefix + ".dilated" + std::to_string(kDilationRates[b]), out);
    out.push_back({prefix + ".se_w1", w1, true});
    out.push_back({prefix + ".se_w2", w2, true});
  }
};

/// L̃_i: L2 -> adaptive average pool + 1x1 conv, L4 -> bilinear + 1x1 conv, L3 -> identity.
template <class T>
Tensor<T> resize_to_reference(const Tensor<T>& l, std::size_t level, const Shape& ref, const Conv<T>* projection) {
  switch (level) {
    case 3:
      return l;
    case 2:
    case 4: {
      detail::require(projection != nullptr, "resize_to_reference", "level " + std::to_string(level) + " needs a projection");
      Tensor<T> r = level == 2 ? adaptive_avg_pool(l, ref.h, ref.w) : resize_bilinear(l, ref.h, ref.w);
      Tensor<T> y = (*projection)(r);
      if (y.shape().c != ref.c) detail::reject("resize_to_reference", "projection does not reach reference channels");
      return y;
    }
    default:
      detail::reject("resize_to_reference", "unknown level " + std::to_string(level) + " (expected 2, 3 or 4)");
  }
}

/// F_cat = [C_{d=1}(x), C_{d=2}(x), C_{d=3}(x)].
template <class T>
Tensor<T> dilated_concat(const Tensor<T>& x, const std::array<Conv<T>, 3>& branches) {
  const Shape s = x.shape();
  if (s.h < kMinDilatedExtent || s.w < kMinDilatedExtent) {
    detail::reject("dilated_concat", "spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                         " is below the minimum " + std::to_string(kMinDilatedExtent));
  }
  std::vector<Tensor<T>> parts;
  for (const auto& b : branches) parts.push_back(b(x));
  return concat(parts);
}

/// α = σ(W2 · ReLU(W1 · avgpool(F_cat))), shaped (N, 3C, 1, 1).
template <class T>
Tensor<T> channel_attention(const Tensor<T>& f_cat, const Tensor<T>& w1, const Tensor<T>& w2) {
  const std::size_t c = f_cat.shape().c;
  const Shape s1 = w1.shape();
  const Shape s2 = w2.shape();
  if (s1.c * s1.h * s1.w != c || s2.n != c || s2.c * s2.h * s2.w != s1.n) {
    detail::reject("channel_attention", "W1 " + s1.str() + " / W2 " + s2.str() + " do not conform to " +
                                            std::to_string(c) + " channels");
  }
  return sigmoid(linear(relu(linear(global_avg_pool(f_cat), w1)), w2));
}

/// ψ(F_cat ⊗ α): split into the three branch groups and sum them.
template <class T>
Tensor<T> fuse_weighted_branches(const Tensor<T>& f_cat, const Tensor<T>& alpha) {
  auto parts = split(mul_channelwise(f_cat, alpha), 3);
  return add(add(parts[0], parts[1]), parts[2]);
}

template <class T>
Tensor<T> dynamic_fuse(const Tensor<T>& x, const DceLevel<T>& p) {
  Tensor<T> f_cat = dilated_concat(x, p.branches);
  return fuse_weighted_branches(f_cat, channel_attention(f_cat, p.w1, p.w2));
}

template <class T>
class DynamicContext {
 public:
  DynamicContext() = default;
  DynamicContext(const DceConfig& cfg, bool attention, Rng& rng) : cfg_(cfg), attention_(attention) {
    const std::size_t c = cfg.channels_l3;
    const std::size_t wide = 3 * c;
    const std::size_t r = cfg.effective_reduction();
    if (wide % r != 0) {
      detail::reject("DynamicContext", "reduction " + std::to_string(r) + " does not divide " + std::to_string(wide));
    }
    const std::size_t hidden = wide / r;
    const std::array<std::size_t, 3> in_ch{cfg.channels_l2, cfg.channels_l3, cfg.channels_l4};
    for (std::size_t i = 0; i < 3; ++i) {
      DceLevel<T>& lv = levels_[i];
      lv.level = i + 2;
      if (lv.level != 3) lv.resize.emplace(ConvSpec::pointwise(in_ch[i], c), rng);
      if (!attention) continue;
      for (std::size_t b = 0; b < 3; ++b) {
        lv.branches[b] = Conv<T>(ConvSpec::square(c, c, 3, 1, kDilationRates[b]), rng);
      }
      lv.w1 = fan_in_uniform<T>(Shape{hidden, wide, 1, 1}, wide, rng);
      lv.w2 = fan_in_uniform<T>(Shape{wide, hidden, 1, 1}, hidden, rng);
    }
  }

  bool attention_enabled() const { return attention_; }
  DceLevel<T>& level(std::size_t i) { return levels_[i - 2]; }

  Tensor<T> resize(const FeatureSet<T>& fs, std::size_t level) const {
    const Tensor<T>& src = level == 2 ? fs.l2 : level == 3 ? fs.l3 : fs.l4;
    const auto& lv = levels_[level - 2];
    return resize_to_reference(src, level, fs.l3.shape(), lv.resize ? &*lv.resize : nullptr);
  }

  /// D = D_2 + D_3 + D_4 at L3 geometry. With attention disabled the
  /// resized levels are summed directly.
  Tensor<T> forward(const FeatureSet<T>& fs) const {
    Tensor<T> total;
    for (std::size_t level = 2; level <= 4; ++level) {
      Tensor<T> x = resize(fs, level);
      Tensor<T> d = attention_ ? dynamic_fuse(x, levels_[level - 2]) : x;
      total = total.defined() ? add(total, d) : d;
    }
    return total;
  }

  void collect(const std::string& prefix, TensorList<T>& out) const {
    for (const auto& lv : levels_) lv.collect(prefix + ".L" + std::to_string(lv.level), out, attention_);
  }

 private:
  DceConfig cfg_;
  bool attention_ = true;
  std::array<DceLevel<T>, 3> levels_;
};

}  // namespace acnet
