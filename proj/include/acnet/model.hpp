#pragma once

// End-to-end detector: composite backbone -> dynamic context enhancement ->
// mask-aware multi-attention -> RPN head. Each block can be switched off
// independently of the others except FRM, which needs CB.

#include <string>
#include <vector>

#include "acnet/backbone.hpp"
#include "acnet/dce.hpp"
#include "acnet/head.hpp"
#include "acnet/mama.hpp"

namespace acnet {

struct AblationFlags {
  bool cb = true;
  bool frm = true;
  bool dce = true;
  bool mama = true;

  static AblationFlags none() { return {false, false, false, false}; }
  static AblationFlags all() { return {true, true, true, true}; }

  /// Rows of the ablation table: "baseline" and b..h.
  static AblationFlags row(const std::string& name) {
    if (name == "baseline" || name == "a") return none();
    if (name == "b") return {true, false, false, false};
    if (name == "c") return {true, true, false, false};
    if (name == "d") return {true, false, true, false};
    if (name == "e") return {true, false, false, true};
    if (name == "f") return {true, true, true, false};
    if (name == "g") return {true, true, false, true};
    if (name == "h") return all();
    throw InvalidInput("AblationFlags: unknown row '" + name + "' (expected baseline or b..h)");
  }

  std::string str() const {
    std::string s;
    for (auto [on, tag] : {std::pair{cb, "CB"}, {frm, "FRM"}, {dce, "DCE"}, {mama, "MAMA"}}) {
      if (!on) continue;
      if (!s.empty()) s += "+";
      s += tag;
    }
    return s.empty() ? "baseline" : s;
  }

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct ModelConfig {
  BackboneConfig backbone;
  AnchorConfig anchors;
  std::size_t dce_reduction = 16;
  AblationFlags flags;

  /// Stride of the L3 map the head runs on.
  std::size_t feature_stride() const { return backbone.stride_at(backbone.stages.size() - 2); }

  DceConfig dce() const {
    const std::size_t k = backbone.stages.size();
    return {backbone.channels_at(k - 3), backbone.channels_at(k - 2), backbone.channels_at(k - 1), dce_reduction};
  }

  void validate() const {
    backbone.validate();
    if (flags.frm && !flags.cb) detail::reject("ModelConfig", "FRM requires CB");
    if (feature_stride() != anchors.stride) {
      detail::reject("ModelConfig", "anchor stride " + std::to_string(anchors.stride) +
                                        " differs from the L3 feature stride " + std::to_string(feature_stride()));
    }
  }
};

template <class T>
struct ModelOutput {
  HeadOutput<T> head;
  Tensor<T> saliency;  // undefined without MAMA
};

template <class T>
class Detector {
 public:
  Detector() = default;

  /// Parameters are drawn from a generator seeded with `seed`, in a fixed
  /// order (backbone, context, attention, head).
  Detector(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    backbone_ = CompositeBackbone<T>(cfg_.backbone, {cfg_.flags.cb, cfg_.flags.frm}, rng);
    context_ = DynamicContext<T>(cfg_.dce(), cfg_.flags.dce, rng);
    const std::size_t c = cfg_.dce().channels_l3;
    if (cfg_.flags.mama) mama_ = Mama<T>(c, rng);
    head_ = RpnHead<T>(c, cfg_.anchors.per_location(), rng);
  }

  const ModelConfig& config() const { return cfg_; }

  ModelOutput<T> forward(const Tensor<T>& image) {
    FeatureSet<T> fs = backbone_.forward(image);
    Tensor<T> d = context_.forward(fs);
    ModelOutput<T> out;
    if (cfg_.flags.mama) {
      auto m = mama_(d);
      out.head = head_(m.features);
      out.saliency = m.saliency;
    } else {
      out.head = head_(d);
    }
    return out;
  }

  void set_mode(BnMode mode) {
    std::vector<BatchNorm<T>*> bns;
    backbone_.batchnorms(bns);
    for (auto* bn : bns) bn->mode = mode;
  }

  /// All persisted tensors, in a stable order.
  TensorList<T> tensors() const {
    TensorList<T> out;
    backbone_.collect("backbone", out);
    context_.collect("dce", out);
    if (cfg_.flags.mama) mama_.collect("mama", out);
    head_.collect("head", out);
    return out;
  }

  TensorList<T> trainable() const {
    TensorList<T> out;
    for (auto& e : tensors()) {
      if (e.trainable) out.push_back(e);
    }
    return out;
  }

  std::size_t parameter_count() const { return count_trainable(tensors()); }

  CompositeBackbone<T>& backbone() { return backbone_; }
  DynamicContext<T>& context() { return context_; }
  Mama<T>& mama() { return mama_; }
  RpnHead<T>& head() { return head_; }

 private:
  ModelConfig cfg_;
  CompositeBackbone<T> backbone_;
  DynamicContext<T> context_;
  Mama<T> mama_;
  RpnHead<T> head_;
};

}  // namespace acnet
