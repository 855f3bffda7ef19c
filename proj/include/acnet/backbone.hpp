#pragma once

// Dual mini-backbone with composite connections and the feature refinement
// module. The assistant backbone runs first; for the last two lead stages the
// assistant features are fused, gated against the lead features and added to
// the lead stream before the stage runs.

#include <optional>
#include <string>
#include <vector>

#include "acnet/nn.hpp"

namespace acnet {

struct StageSpec {
  std::size_t channels = 16;
  std::size_t stride = 2;
};

struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t stem_channels = 0;  // 0 disables the stride-1 stem
  std::vector<StageSpec> stages{{16, 2}, {32, 2}, {64, 2}, {128, 2}};

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (const auto& st : stages) s *= st.stride;
    return s;
  }

  /// Cumulative stride at the output of stage `index` (0-based).
  std::size_t stride_at(std::size_t index) const {
    std::size_t s = 1;
    for (std::size_t i = 0; i <= index; ++i) s *= stages[i].stride;
    return s;
  }

  std::size_t channels_at(std::size_t index) const { return stages[index].channels; }

  void validate() const {
    detail::require(stages.size() >= 3, "BackboneConfig", "at least three stages are required");
    for (const auto& s : stages) {
      detail::require(s.stride == 1 || s.stride == 2, "BackboneConfig", "stage strides must be 1 or 2");
      detail::require(s.channels > 0, "BackboneConfig", "stage channels must be positive");
    }
  }
};

/// Last three lead-stage outputs.
template <class T>
struct FeatureSet {
  Tensor<T> l2;
  Tensor<T> l3;
  Tensor<T> l4;
};

/// Intermediate maps of one composite forward pass, indexed by 0-based stage.
/// `fused` and `refined` are only populated at injection stages.
template <class T>
struct DualFeatures {
  std::vector<Tensor<T>> assistant;
  std::vector<Tensor<T>> lead;
  std::vector<Tensor<T>> fused;
  std::vector<Tensor<T>> refined;
};

template <class T>
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = cfg_.in_channels;
    if (cfg_.stem_channels > 0) {
      stem_ = ConvBnRelu<T>(in, cfg_.stem_channels, 1, rng);
      in = cfg_.stem_channels;
    }
    for (const auto& s : cfg_.stages) {
      stages_.emplace_back(in, s.channels, s.stride, rng);
      in = s.channels;
    }
  }

  const BackboneConfig& config() const { return cfg_; }
  std::size_t num_stages() const { return stages_.size(); }

  void check_input(const Tensor<T>& image) const {
    const Shape s = image.shape();
    detail::require(s.c == cfg_.in_channels, "backbone_forward",
                    "image has " + std::to_string(s.c) + " channels, expected " + std::to_string(cfg_.in_channels));
    const std::size_t stride = cfg_.total_stride();
    if (s.h == 0 || s.w == 0 || s.h % stride != 0 || s.w % stride != 0) {
      detail::reject("backbone_forward", "spatial size " + std::to_string(s.h) + "x" + std::to_string(s.w) +
                                             " is not divisible by the cumulative stride " + std::to_string(stride));
    }
  }

  Tensor<T> stem(const Tensor<T>& image) { return stem_ ? (*stem_)(image) : image; }
  Tensor<T> stage(std::size_t index, const Tensor<T>& x) { return stages_[index](x); }

  /// All stage outputs, in order.
  std::vector<Tensor<T>> forward(const Tensor<T>& image) {
    check_input(image);
    std::vector<Tensor<T>> outs;
    Tensor<T> x = stem(image);
    for (std::size_t i = 0; i < stages_.size(); ++i) {
      x = stage(i, x);
      outs.push_back(x);
    }
    return outs;
  }

  void collect(const std::string& prefix, TensorList<T>& out) const {
    if (stem_) stem_->collect(prefix + ".stem", out);
    for (std::size_t i = 0; i < stages_.size(); ++i) stages_[i].collect(prefix + ".stage" + std::to_string(i + 1), out);
  }

  void batchnorms(std::vector<BatchNorm<T>*>& out) {
    if (stem_) out.push_back(&stem_->bn);
    for (auto& s : stages_) out.push_back(&s.bn);
  }

 private:
  BackboneConfig cfg_;
  std::optional<ConvBnRelu<T>> stem_;
  std::vector<ConvBnRelu<T>> stages_;
};

/// Feature refinement for one injection level k.
///   fuse:   f_k = ReLU(BN(A_{k-1} + project(bilinear(A_k))))
///   inject: g_k = conv3x3(ReLU(BN(L_{k-1}) * f_k))
template <class T>
struct FeatureRefinement {
  Conv<T> project;  // 1x1, C_k -> C_{k-1}
  BatchNorm<T> fuse_bn;
  BatchNorm<T> lead_bn;
  Conv<T> refine;   // 3x3 pad 1, C_{k-1} -> C_{k-1}

  FeatureRefinement() = default;
  FeatureRefinement(std::size_t channels_k, std::size_t channels_prev, Rng& rng)
      : project(ConvSpec::pointwise(channels_k, channels_prev, false), rng),
        fuse_bn(channels_prev),
        lead_bn(channels_prev),
        refine(ConvSpec::square(channels_prev, channels_prev, 3), rng) {}

  void collect(const std::string& prefix, TensorList<T>& out) const {
    project.collect(prefix + ".project", out);
    collect_bn(fuse_bn, prefix + ".fuse_bn", out);
    collect_bn(lead_bn, prefix + ".lead_bn", out);
    refine.collect(prefix + ".refine", out);
  }
};

/// Resamples `x` to the spatial extent of `like` and projects it to `like`'s channels.
template <class T>
Tensor<T> upsample_project(const Tensor<T>& x, const Conv<T>& projection, const Tensor<T>& like) {
  const Shape ls = like.shape();
  Tensor<T> y = projection(resize_bilinear(x, ls.h, ls.w));
  if (y.shape() != ls) {
    detail::reject("upsample_project", "projected shape " + y.shape().str() + " does not conform to " + ls.str());
  }
  return y;
}

template <class T>
Tensor<T> frm_fuse(const Tensor<T>& a_k, const Tensor<T>& a_prev, FeatureRefinement<T>& m) {
  if (a_k.shape().n != a_prev.shape().n) detail::reject("frm_fuse", "batch sizes differ");
  Tensor<T> lifted = upsample_project(a_k, m.project, a_prev);
  return relu(batchnorm(add(a_prev, lifted), m.fuse_bn));
}

template <class T>
Tensor<T> frm_inject(const Tensor<T>& l_prev, const Tensor<T>& f_k, FeatureRefinement<T>& m) {
  if (l_prev.shape() != f_k.shape()) {
    detail::reject("frm_inject", "lead features " + l_prev.shape().str() + " and fused features " +
                                     f_k.shape().str() + " differ");
  }
  return m.refine(relu(mul(batchnorm(l_prev, m.lead_bn), f_k)));
}

struct CompositeFlags {
  bool composite = false;  // CB
  bool refinement = false; // FRM (requires CB)
};

template <class T>
class CompositeBackbone {
 public:
  CompositeBackbone() = default;
  CompositeBackbone(const BackboneConfig& cfg, CompositeFlags flags, Rng& rng) : flags_(flags) {
    if (flags.refinement && !flags.composite) {
      detail::reject("CompositeBackbone", "feature refinement requires the composite backbone");
    }
    lead_ = Backbone<T>(cfg, rng);
    if (!flags.composite) return;
    assistant_ = Backbone<T>(cfg, rng);
    for (std::size_t s : injection_stages()) {
      const std::size_t ck = cfg.channels_at(s);
      const std::size_t cp = cfg.channels_at(s - 1);
      if (flags.refinement) {
        refiners_.emplace_back(ck, cp, rng);
      } else {
        connections_.emplace_back(ConvSpec::pointwise(ck, cp), rng);
      }
    }
  }

  /// 0-based stage indices whose input receives assistant features: the last two stages.
  std::vector<std::size_t> injection_stages() const {
    const std::size_t k = lead_.num_stages();
    return {k - 2, k - 1};
  }

  const BackboneConfig& config() const { return lead_.config(); }
  CompositeFlags flags() const { return flags_; }

  FeatureSet<T> forward(const Tensor<T>& image, DualFeatures<T>* trace = nullptr) {
    lead_.check_input(image);
    const std::size_t k = lead_.num_stages();
    std::vector<Tensor<T>> assist;
    if (flags_.composite) assist = assistant_.forward(image);

    std::vector<Tensor<T>> lead_out;
    std::vector<Tensor<T>> fused(k), refined(k);
    Tensor<T> x = lead_.stem(image);
    const auto inject_at = injection_stages();
    for (std::size_t s = 0; s < k; ++s) {
      if (flags_.composite && s >= inject_at.front()) {
        const std::size_t slot = s - inject_at.front();
        if (flags_.refinement) {
          fused[s] = frm_fuse(assist[s], assist[s - 1], refiners_[slot]);
          refined[s] = frm_inject(x, fused[s], refiners_[slot]);
          x = add(x, refined[s]);
        } else {
          x = add(x, upsample_project(assist[s], connections_[slot], x));
        }
      }
      x = lead_.stage(s, x);
      lead_out.push_back(x);
    }
    if (trace) *trace = DualFeatures<T>{assist, lead_out, fused, refined};
    return {lead_out[k - 3], lead_out[k - 2], lead_out[k - 1]};
  }

  void collect(const std::string& prefix, TensorList<T>& out) const {
    lead_.collect(prefix + ".lead", out);
    if (!flags_.composite) return;
    assistant_.collect(prefix + ".assistant", out);
    for (std::size_t i = 0; i < refiners_.size(); ++i) refiners_[i].collect(prefix + ".frm" + std::to_string(i), out);
    for (std::size_t i = 0; i < connections_.size(); ++i) {
      connections_[i].collect(prefix + ".connect" + std::to_string(i), out);
    }
  }

  void batchnorms(std::vector<BatchNorm<T>*>& out) {
    lead_.batchnorms(out);
    if (!flags_.composite) return;
    assistant_.batchnorms(out);
    for (auto& r : refiners_) {
      out.push_back(&r.fuse_bn);
      out.push_back(&r.lead_bn);
    }
  }

  Backbone<T>& lead() { return lead_; }
  Backbone<T>& assistant() { return assistant_; }
  std::vector<FeatureRefinement<T>>& refiners() { return refiners_; }

 private:
  CompositeFlags flags_;
  Backbone<T> lead_;
  Backbone<T> assistant_;
  std::vector<FeatureRefinement<T>> refiners_;
  std::vector<Conv<T>> connections_;
};

}  // namespace acnet
