#pragma once

// Named finite-difference checks over every operator and composed block,
// at double precision.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "acnet/grad_check.hpp"
#include "acnet/model.hpp"

namespace acnet {

enum class CheckKind { primitive, composition };

inline double tolerance(CheckKind k) { return k == CheckKind::primitive ? 1e-4 : 1e-3; }

struct NamedCheck {
  std::string name;
  CheckKind kind;
  std::function<GradCheckResult()> run;
};

namespace detail {

using D = double;

// Uniform(lo, hi) with a random sign when `away_from_zero` (|x| in [lo, hi]).
inline Tensor<D> random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0, bool away_from_zero = false) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::bernoulli_distribution sign(0.5);
  std::vector<D> v(s.numel());
  for (auto& e : v) e = away_from_zero ? (sign(rng) ? u(rng) : -u(rng)) : u(rng);
  Tensor<D> t(s, std::move(v));
  t.set_requires_grad();
  return t;
}

inline std::vector<Tensor<D>> params_of(const TensorList<D>& list) {
  std::vector<Tensor<D>> out;
  for (const auto& e : list) {
    if (e.trainable) out.push_back(e.tensor);
  }
  return out;
}

// Non-zero biases keep ReLU pre-activations off the kink, where central
// differences are not defined.
inline void jitter_biases(const TensorList<D>& list, Rng& rng) {
  std::uniform_real_distribution<double> u(0.05, 0.25);
  std::bernoulli_distribution sign(0.5);
  for (const auto& e : list) {
    if (e.name.size() < 5 || e.name.compare(e.name.size() - 5, 5, ".bias") != 0) continue;
    Tensor<D> t = e.tensor;
    for (auto& v : t.values()) v = sign(rng) ? u(rng) : -u(rng);
  }
}

inline std::vector<Tensor<D>> join(std::vector<Tensor<D>> a, const std::vector<Tensor<D>>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Small model on 1x3x16x16: stage outputs 8/8/8/4, head on the stride-2 L3 map.
// L3 has 16 channels so the context bottleneck (C/4) is wider than two.
inline ModelConfig tiny_model_config(AblationFlags flags) {
  ModelConfig m;
  m.backbone.stages = {{4, 2}, {8, 1}, {16, 1}, {16, 2}};
  m.anchors.stride = 2;
  m.anchors.base_size = 8.0;
  m.anchors.ratios = {0.5, 1.0};
  m.anchors.scales = {0.5, 1.0};
  m.flags = flags;
  return m;
}

inline AnchorSet random_anchor_set(std::size_t count, Rng& rng) {
  AnchorSet s;
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  std::uniform_int_distribution<int> lab(-1, 1);
  for (std::size_t i = 0; i < count; ++i) {
    s.anchors.push_back({0, 0, 4, 4});
    const auto l = static_cast<AnchorLabel>(lab(rng));
    s.labels.push_back(l);
    s.targets.push_back({u(rng), u(rng), u(rng), u(rng)});
    if (l == AnchorLabel::positive) ++s.n_reg;
    if (l != AnchorLabel::ignore) ++s.n_cls;
  }
  return s;
}

}  // namespace detail

/// The full suite. Every check builds its own inputs from `seed`.
inline std::vector<NamedCheck> gradient_checks(std::uint64_t seed = 2024) {
  using detail::D;
  using detail::random_tensor;
  std::vector<NamedCheck> checks;
  auto reg = [&](std::string name, CheckKind kind, std::function<GradCheckResult()> fn) {
    checks.push_back({std::move(name), kind, std::move(fn)});
  };
  const auto P = CheckKind::primitive;
  const auto C = CheckKind::composition;

  reg("conv2d", P, [seed] {
    Rng rng(seed);
    auto x = random_tensor({2, 3, 7, 6}, rng);
    ConvParams<D> p{random_tensor({4, 3, 3, 3}, rng), random_tensor({1, 4, 1, 1}, rng), 2, 1, 1, 1};
    return grad_check([&] { return conv2d(x, p); }, {x, p.weight, p.bias});
  });
  reg("conv2d_dilated", P, [seed] {
    Rng rng(seed + 1);
    auto x = random_tensor({1, 2, 9, 9}, rng);
    ConvParams<D> p{random_tensor({3, 2, 3, 3}, rng), {}, 1, 3, 3, 3};
    return grad_check([&] { return conv2d(x, p); }, {x, p.weight});
  });
  reg("conv2d_asymmetric", P, [seed] {
    Rng rng(seed + 2);
    auto x = random_tensor({1, 3, 5, 6}, rng);
    ConvParams<D> p{random_tensor({2, 3, 1, 3}, rng), random_tensor({1, 2, 1, 1}, rng), 1, 0, 1, 1};
    return grad_check([&] { return conv2d(x, p); }, {x, p.weight, p.bias});
  });
  reg("conv2d_pointwise", P, [seed] {
    Rng rng(seed + 3);
    auto x = random_tensor({2, 4, 3, 3}, rng);
    ConvParams<D> p{random_tensor({5, 4, 1, 1}, rng), random_tensor({1, 5, 1, 1}, rng)};
    return grad_check([&] { return conv2d(x, p); }, {x, p.weight, p.bias});
  });
  reg("batchnorm_train", P, [seed] {
    Rng rng(seed + 4);
    auto x = random_tensor({2, 3, 4, 4}, rng);
    BatchNorm<D> bn(3);
    bn.gamma = random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5);
    bn.beta = random_tensor({1, 3, 1, 1}, rng);
    return grad_check([&] { return batchnorm(x, bn); }, {x, bn.gamma, bn.beta});
  });
  reg("batchnorm_infer", P, [seed] {
    Rng rng(seed + 5);
    auto x = random_tensor({2, 3, 4, 4}, rng);
    BatchNorm<D> bn(3);
    bn.mode = BnMode::infer;
    bn.gamma = random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5);
    bn.beta = random_tensor({1, 3, 1, 1}, rng);
    for (auto& v : bn.running_var.values()) v = 0.7;
    return grad_check([&] { return batchnorm(x, bn); }, {x, bn.gamma, bn.beta});
  });
  reg("relu", P, [seed] {
    Rng rng(seed + 6);
    auto x = random_tensor({1, 2, 4, 4}, rng, 0.05, 1.0, true);
    return grad_check([&] { return relu(x); }, {x});
  });
  reg("sigmoid", P, [seed] {
    Rng rng(seed + 7);
    auto x = random_tensor({1, 2, 4, 4}, rng, -4.0, 4.0);
    return grad_check([&] { return sigmoid(x); }, {x});
  });
  reg("resize_bilinear_up", P, [seed] {
    Rng rng(seed + 8);
    auto x = random_tensor({1, 2, 3, 4}, rng);
    return grad_check([&] { return resize_bilinear(x, 7, 9); }, {x});
  });
  reg("resize_bilinear_down", P, [seed] {
    Rng rng(seed + 9);
    auto x = random_tensor({1, 2, 9, 8}, rng);
    return grad_check([&] { return resize_bilinear(x, 4, 3); }, {x});
  });
  reg("adaptive_avg_pool", P, [seed] {
    Rng rng(seed + 10);
    auto x = random_tensor({2, 2, 7, 5}, rng);
    return grad_check([&] { return adaptive_avg_pool(x, 3, 2); }, {x});
  });
  reg("global_avg_pool", P, [seed] {
    Rng rng(seed + 11);
    auto x = random_tensor({2, 3, 4, 5}, rng);
    return grad_check([&] { return global_avg_pool(x); }, {x});
  });
  reg("linear", P, [seed] {
    Rng rng(seed + 12);
    auto x = random_tensor({2, 6, 1, 1}, rng);
    auto w = random_tensor({4, 6, 1, 1}, rng);
    auto b = random_tensor({1, 4, 1, 1}, rng);
    return grad_check([&] { return linear(x, w, b); }, {x, w, b});
  });
  reg("elementwise_sum", P, [seed] {
    Rng rng(seed + 13);
    auto a = random_tensor({1, 2, 3, 3}, rng);
    auto b = random_tensor({1, 2, 3, 3}, rng);
    return grad_check([&] { return add(a, b); }, {a, b});
  });
  reg("elementwise_product", P, [seed] {
    Rng rng(seed + 14);
    auto a = random_tensor({1, 2, 3, 3}, rng);
    auto b = random_tensor({1, 2, 3, 3}, rng);
    return grad_check([&] { return mul(a, b); }, {a, b});
  });
  reg("concat", P, [seed] {
    Rng rng(seed + 15);
    auto a = random_tensor({2, 1, 3, 3}, rng);
    auto b = random_tensor({2, 3, 3, 3}, rng);
    return grad_check([&] { return concat<D>({a, b}); }, {a, b});
  });
  reg("split", P, [seed] {
    Rng rng(seed + 16);
    auto x = random_tensor({2, 6, 2, 2}, rng);
    // Weight each group differently so the check sees every slice.
    return grad_check(
        [&] {
          auto parts = split(x, 3);
          return add(add(parts[0], mul(parts[1], parts[1])), mul(parts[2], parts[0]));
        },
        {x});
  });
  reg("mul_channelwise", P, [seed] {
    Rng rng(seed + 17);
    auto x = random_tensor({2, 3, 3, 3}, rng);
    auto s = random_tensor({2, 3, 1, 1}, rng);
    return grad_check([&] { return mul_channelwise(x, s); }, {x, s});
  });
  reg("mul_spatial", P, [seed] {
    Rng rng(seed + 18);
    auto x = random_tensor({2, 3, 3, 3}, rng);
    auto m = random_tensor({2, 1, 3, 3}, rng);
    return grad_check([&] { return mul_spatial(x, m); }, {x, m});
  });
  reg("add_channelwise", P, [seed] {
    Rng rng(seed + 19);
    auto x = random_tensor({2, 3, 3, 3}, rng);
    auto v = random_tensor({2, 3, 1, 1}, rng);
    return grad_check([&] { return add_channelwise(x, v); }, {x, v});
  });
  reg("softmax_spatial", P, [seed] {
    Rng rng(seed + 20);
    auto x = random_tensor({2, 1, 3, 4}, rng, -2.0, 2.0);
    return grad_check([&] { return softmax_spatial(x); }, {x});
  });
  reg("attention_pool", P, [seed] {
    Rng rng(seed + 21);
    auto x = random_tensor({2, 3, 3, 3}, rng);
    auto w = random_tensor({2, 1, 3, 3}, rng);
    return grad_check([&] { return attention_pool(x, w); }, {x, w});
  });
  reg("layer_norm", P, [seed] {
    Rng rng(seed + 22);
    auto x = random_tensor({2, 4, 1, 1}, rng);
    auto g = random_tensor({1, 4, 1, 1}, rng, 0.5, 1.5);
    auto b = random_tensor({1, 4, 1, 1}, rng);
    return grad_check([&] { return layer_norm(x, g, b); }, {x, g, b});
  });
  reg("attention_loss", P, [seed] {
    Rng rng(seed + 23);
    auto s = random_tensor({2, 1, 3, 3}, rng, 0.05, 0.95);
    Tensor<D> label(Shape{2, 1, 3, 3});
    std::bernoulli_distribution coin(0.4);
    for (auto& v : label.values()) v = coin(rng) ? 1.0 : 0.0;
    return grad_check([&] { return attention_loss(s, label); }, {s});
  });
  reg("classification_loss", P, [seed] {
    Rng rng(seed + 24);
    auto obj = random_tensor({2, 3, 2, 2}, rng, -3.0, 3.0);
    std::vector<AnchorSet> sets{detail::random_anchor_set(12, rng), detail::random_anchor_set(12, rng)};
    return grad_check([&] { return classification_loss(obj, std::span<const AnchorSet>(sets)); }, {obj});
  });
  reg("regression_loss", P, [seed] {
    Rng rng(seed + 25);
    auto deltas = random_tensor({2, 12, 2, 2}, rng, -2.0, 2.0);
    std::vector<AnchorSet> sets{detail::random_anchor_set(12, rng), detail::random_anchor_set(12, rng)};
    return grad_check([&] { return regression_loss(deltas, Shape{2, 3, 2, 2}, std::span<const AnchorSet>(sets)); },
                      {deltas});
  });

  // Composed blocks.
  reg("frm_fuse", C, [seed] {
    Rng rng(seed + 100);
    FeatureRefinement<D> m(6, 4, rng);
    auto a_k = random_tensor({2, 6, 3, 3}, rng);
    auto a_prev = random_tensor({2, 4, 6, 6}, rng);
    return grad_check([&] { return frm_fuse(a_k, a_prev, m); },
                      {a_k, a_prev, m.project.p.weight, m.fuse_bn.gamma, m.fuse_bn.beta});
  });
  reg("frm_inject", C, [seed] {
    Rng rng(seed + 101);
    FeatureRefinement<D> m(6, 4, rng);
    auto l = random_tensor({2, 4, 5, 5}, rng);
    auto f = random_tensor({2, 4, 5, 5}, rng);
    return grad_check([&] { return frm_inject(l, f, m); },
                      {l, f, m.lead_bn.gamma, m.lead_bn.beta, m.refine.p.weight, m.refine.p.bias});
  });
  reg("composite_forward", C, [seed] {
    Rng rng(seed + 102);
    BackboneConfig cfg;
    cfg.stages = {{4, 2}, {4, 1}, {8, 2}, {8, 1}};
    CompositeBackbone<D> bb(cfg, {true, true}, rng);
    auto x = random_tensor({2, 3, 8, 8}, rng);
    TensorList<D> list;
    bb.collect("bb", list);
    detail::jitter_biases(list, rng);
    GradCheckOptions o;
    o.max_coords_per_tensor = 12;
    return grad_check(
        [&] {
          auto fs = bb.forward(x);
          return concat<D>({resize_bilinear(fs.l2, 2, 2), fs.l3, fs.l4});
        },
        detail::join({x}, detail::params_of(list)), o);
  });
  reg("channel_attention", C, [seed] {
    Rng rng(seed + 103);
    auto f = random_tensor({2, 6, 3, 3}, rng);
    auto w1 = random_tensor({2, 6, 1, 1}, rng);
    auto w2 = random_tensor({6, 2, 1, 1}, rng);
    return grad_check([&] { return channel_attention(f, w1, w2); }, {f, w1, w2});
  });
  reg("dynamic_fuse", C, [seed] {
    Rng rng(seed + 104);
    DceConfig cfg{4, 4, 4, 4};
    DynamicContext<D> dce(cfg, true, rng);
    auto& lv = dce.level(3);
    auto x = random_tensor({1, 4, 7, 7}, rng);
    return grad_check([&] { return dynamic_fuse(x, lv); },
                      {x, lv.branches[0].p.weight, lv.branches[1].p.weight, lv.branches[2].p.bias, lv.w1, lv.w2});
  });
  reg("dce_forward", C, [seed] {
    Rng rng(seed + 105);
    DceConfig cfg{4, 8, 8, 8};
    DynamicContext<D> dce(cfg, true, rng);
    FeatureSet<D> fs{random_tensor({1, 4, 14, 14}, rng), random_tensor({1, 8, 7, 7}, rng),
                     random_tensor({1, 8, 4, 4}, rng)};
    TensorList<D> list;
    dce.collect("dce", list);
    detail::jitter_biases(list, rng);
    GradCheckOptions o;
    o.max_coords_per_tensor = 16;
    return grad_check([&] { return dce.forward(fs); }, detail::join({fs.l2, fs.l3, fs.l4}, detail::params_of(list)), o);
  });
  reg("inception", C, [seed] {
    Rng rng(seed + 106);
    Inception<D> m(8, rng);
    auto x = random_tensor({1, 8, 5, 5}, rng);
    TensorList<D> list;
    m.collect("inc", list);
    detail::jitter_biases(list, rng);
    GradCheckOptions o;
    o.max_coords_per_tensor = 16;
    return grad_check([&] { return m(x); }, detail::join({x}, detail::params_of(list)), o);
  });
  reg("mask_attention", C, [seed] {
    Rng rng(seed + 107);
    MaskAttention<D> m(8, rng);
    auto x = random_tensor({2, 8, 4, 4}, rng);
    TensorList<D> list;
    m.collect("mask", list);
    detail::jitter_biases(list, rng);
    return grad_check(
        [&] {
          auto o = m(x);
          return concat<D>({o.gated, o.saliency});
        },
        detail::join({x}, detail::params_of(list)));
  });
  reg("context_attention", C, [seed] {
    Rng rng(seed + 108);
    ContextAttention<D> m(16, rng);
    // Leave the zero-initialized transform so every path carries gradient.
    for (auto& v : m.up.p.weight.values()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    auto x = random_tensor({2, 16, 4, 4}, rng);
    TensorList<D> list;
    m.collect("gc", list);
    detail::jitter_biases(list, rng);
    return grad_check([&] { return m(x); }, detail::join({x}, detail::params_of(list)));
  });
  reg("mama_forward", C, [seed] {
    Rng rng(seed + 109);
    Mama<D> m(16, rng);
    for (auto& v : m.context.up.p.weight.values()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    auto x = random_tensor({1, 16, 4, 4}, rng);
    TensorList<D> list;
    m.collect("mama", list);
    detail::jitter_biases(list, rng);
    GradCheckOptions o;
    o.max_coords_per_tensor = 16;
    return grad_check(
        [&] {
          auto out = m(x);
          return concat<D>({out.features, out.saliency});
        },
        detail::join({x}, detail::params_of(list)), o);
  });
  reg("total_loss", C, [seed] {
    Rng rng(seed + 110);
    RpnHead<D> head(4, 2, rng);
    auto feat = random_tensor({2, 4, 3, 3}, rng);
    auto sal = random_tensor({2, 1, 3, 3}, rng, 0.05, 0.95);
    Tensor<D> label(Shape{2, 1, 3, 3});
    std::bernoulli_distribution coin(0.4);
    for (auto& v : label.values()) v = coin(rng) ? 1.0 : 0.0;
    std::vector<AnchorSet> sets{detail::random_anchor_set(18, rng), detail::random_anchor_set(18, rng)};
    TensorList<D> list;
    head.collect("head", list);
    detail::jitter_biases(list, rng);
    return grad_check(
        [&] {
          auto out = head(feat);
          return total_loss(out, std::span<const AnchorSet>(sets), &sal, &label).total;
        },
        detail::join({feat, sal}, detail::params_of(list)));
  });
  reg("full_model", C, [seed] {
    const auto cfg = detail::tiny_model_config(AblationFlags::all());
    Detector<D> model(cfg, seed + 111);
    Rng rng(seed + 112);
    for (auto& v : model.mama().context.up.p.weight.values()) v = std::uniform_real_distribution<double>(-0.5, 0.5)(rng);
    detail::jitter_biases(model.tensors(), rng);
    auto x = random_tensor({1, 3, 16, 16}, rng, 0.0, 1.0);
    const auto anchors = generate_anchors(16, 16, cfg.anchors);
    std::vector<AnchorSet> sets{assign_anchors(anchors, {{2, 2, 7, 8}, {9, 8, 14, 13}}, cfg.anchors.pos_iou,
                                               cfg.anchors.neg_iou)};
    auto mask = rasterize_mask_label<D>({{2, 2, 7, 8}, {9, 8, 14, 13}}, 16, 16, cfg.feature_stride());
    GradCheckOptions o;
    o.max_coords_per_tensor = 6;
    return grad_check(
        [&] {
          auto out = model.forward(x);
          return total_loss(out.head, std::span<const AnchorSet>(sets), &out.saliency, &mask).total;
        },
        detail::join({x}, detail::params_of(model.tensors())), o);
  });
  return checks;
}

}  // namespace acnet
