#pragma once

// RPN-style detection head and the three-term multi-task loss:
//   L = (1/N_cls) Σ L_cls + (1/N_reg) Σ p*·L_reg + (1/(h·w)) Σ L_att

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acnet/anchors.hpp"
#include "acnet/mama.hpp"
#include "acnet/nn.hpp"

namespace acnet {

template <class T>
struct HeadOutput {
  Tensor<T> objectness;  // (N, A, h, w) logits
  Tensor<T> deltas;      // (N, 4A, h, w)
};

/// Shared 3x3 conv + ReLU trunk with sibling 1x1 objectness and delta convs.
template <class T>
struct RpnHead {
  Conv<T> trunk;
  Conv<T> cls;
  Conv<T> reg;
  std::size_t anchors_per_location = 0;

  RpnHead() = default;
  RpnHead(std::size_t channels, std::size_t anchors, Rng& rng)
      : trunk(ConvSpec::square(channels, channels, 3), rng), anchors_per_location(anchors) {
    ConvSpec c = ConvSpec::pointwise(channels, anchors);
    c.gain = 0.1;
    cls = Conv<T>(c, rng);
    ConvSpec r = ConvSpec::pointwise(channels, 4 * anchors);
    r.gain = 0.1;
    reg = Conv<T>(r, rng);
  }

  HeadOutput<T> operator()(const Tensor<T>& features) const {
    Tensor<T> t = relu(trunk(features));
    return {cls(t), reg(t)};
  }

  void collect(const std::string& prefix, TensorList<T>& out) const {
    trunk.collect(prefix + ".trunk", out);
    cls.collect(prefix + ".cls", out);
    reg.collect(prefix + ".reg", out);
  }
};

/// 0.5·x² for |x| < 1, |x| - 0.5 otherwise.
inline double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline double smooth_l1_grad(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0.0 ? 1.0 : -1.0;
}

/// Binary log loss on a logit, computed without overflow.
inline double logistic_loss(double logit, double target) {
  return std::max(logit, 0.0) - logit * target + std::log1p(std::exp(-std::abs(logit)));
}

namespace detail {

template <class T>
void check_head_layout(const HeadOutput<T>& out, std::span<const AnchorSet> sets) {
  const Shape os = out.objectness.shape();
  const Shape ds = out.deltas.shape();
  if (ds != Shape{os.n, 4 * os.c, os.h, os.w}) reject("total_loss", "delta map does not match objectness layout");
  if (sets.size() != os.n) reject("total_loss", "one anchor set per image is required");
  for (const auto& s : sets) {
    if (s.anchors.size() != os.c * os.h * os.w) {
      reject("total_loss", "anchor count " + std::to_string(s.anchors.size()) + " does not match head grid " +
                               std::to_string(os.c * os.h * os.w));
    }
  }
}

// Flat offsets of anchor `idx` = (i·w + j)·A + a in the objectness map.
inline std::size_t objectness_offset(const Shape& s, std::size_t n, std::size_t idx) {
  const std::size_t a = idx % s.c;
  const std::size_t cell = idx / s.c;
  return ((n * s.c + a) * s.h + cell / s.w) * s.w + cell % s.w;
}

inline std::size_t delta_offset(const Shape& objectness, std::size_t n, std::size_t idx, std::size_t k) {
  const std::size_t a = idx % objectness.c;
  const std::size_t cell = idx / objectness.c;
  const std::size_t cd = 4 * objectness.c;
  return ((n * cd + 4 * a + k) * objectness.h + cell / objectness.w) * objectness.w + cell % objectness.w;
}

}  // namespace detail

/// (1/N_cls)·Σ over non-ignored anchors of the logistic loss; N_cls counts
/// the scored anchors across the batch (floor 1).
template <class T>
Tensor<T> classification_loss(const Tensor<T>& objectness, std::span<const AnchorSet> sets) {
  const Shape s = objectness.shape();
  std::size_t scored = 0;
  double acc = 0.0;
  for (std::size_t n = 0; n < sets.size(); ++n) {
    for (std::size_t idx = 0; idx < sets[n].labels.size(); ++idx) {
      const AnchorLabel l = sets[n].labels[idx];
      if (l == AnchorLabel::ignore) continue;
      ++scored;
      acc += logistic_loss(objectness.data()[detail::objectness_offset(s, n, idx)], l == AnchorLabel::positive);
    }
  }
  const double norm = static_cast<double>(std::max<std::size_t>(scored, 1));
  std::vector<std::vector<AnchorLabel>> labels;
  for (const auto& set : sets) labels.push_back(set.labels);
  return detail::make_result<T>(Shape{1, 1, 1, 1}, {static_cast<T>(acc / norm)}, {&objectness},
                                [objectness, labels = std::move(labels), norm](Node<T>& self) {
                                  const Shape s = objectness.shape();
                                  auto dz = detail::grad_sink(objectness);
                                  const double g = self.grad[0] / norm;
                                  for (std::size_t n = 0; n < labels.size(); ++n) {
                                    for (std::size_t idx = 0; idx < labels[n].size(); ++idx) {
                                      if (labels[n][idx] == AnchorLabel::ignore) continue;
                                      const std::size_t off = detail::objectness_offset(s, n, idx);
                                      const double p = detail::sigmoid_scalar<double>(objectness.data()[off]);
                                      const double y = labels[n][idx] == AnchorLabel::positive ? 1.0 : 0.0;
                                      dz[off] += static_cast<T>(g * (p - y));
                                    }
                                  }
                                });
}

/// (1/N_reg)·Σ over positives of smooth-L1 summed over the 4 coordinates;
/// N_reg counts positives across the batch (floor 1).
template <class T>
Tensor<T> regression_loss(const Tensor<T>& deltas, const Shape& objectness_shape, std::span<const AnchorSet> sets) {
  struct Term {
    std::size_t off[4];
    double target[4];
  };
  std::vector<Term> terms;
  double acc = 0.0;
  for (std::size_t n = 0; n < sets.size(); ++n) {
    for (std::size_t idx = 0; idx < sets[n].labels.size(); ++idx) {
      if (sets[n].labels[idx] != AnchorLabel::positive) continue;
      Term t{};
      for (std::size_t k = 0; k < 4; ++k) {
        t.off[k] = detail::delta_offset(objectness_shape, n, idx, k);
        t.target[k] = sets[n].targets[idx][k];
        acc += smooth_l1(deltas.data()[t.off[k]] - t.target[k]);
      }
      terms.push_back(t);
    }
  }
  const double norm = static_cast<double>(std::max<std::size_t>(terms.size(), 1));
  return detail::make_result<T>(Shape{1, 1, 1, 1}, {static_cast<T>(acc / norm)}, {&deltas},
                                [deltas, terms = std::move(terms), norm](Node<T>& self) {
                                  auto dd = detail::grad_sink(deltas);
                                  const double g = self.grad[0] / norm;
                                  for (const Term& t : terms) {
                                    for (std::size_t k = 0; k < 4; ++k) {
                                      dd[t.off[k]] += static_cast<T>(
                                          g * smooth_l1_grad(deltas.data()[t.off[k]] - t.target[k]));
                                    }
                                  }
                                });
}

template <class T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> cls;
  Tensor<T> reg;
  Tensor<T> att;  // undefined when no saliency is supervised
};

/// Equal-weight sum of the classification, regression and (optional) attention terms.
template <class T>
LossTerms<T> total_loss(const HeadOutput<T>& out, std::span<const AnchorSet> sets, const Tensor<T>* saliency = nullptr,
                        const Tensor<T>* mask_label = nullptr) {
  detail::check_head_layout(out, sets);
  LossTerms<T> terms;
  terms.cls = classification_loss(out.objectness, sets);
  terms.reg = regression_loss(out.deltas, out.objectness.shape(), sets);
  terms.total = add(terms.cls, terms.reg);
  if (saliency && saliency->defined()) {
    detail::require(mask_label && mask_label->defined(), "total_loss", "saliency supervision needs a mask label");
    terms.att = attention_loss(*saliency, *mask_label);
    terms.total = add(terms.total, terms.att);
  }
  return terms;
}

/// Scored, decoded (and clipped) boxes for image `n`, one per anchor, in anchor order.
template <class T>
std::vector<Detection> decode_head(const HeadOutput<T>& out, const std::vector<Box>& anchors, std::size_t n,
                                   double image_w, double image_h) {
  const Shape s = out.objectness.shape();
  if (anchors.size() != s.c * s.h * s.w) throw InvalidInput("decode_head: anchor count does not match head grid");
  std::vector<Detection> dets;
  dets.reserve(anchors.size());
  for (std::size_t idx = 0; idx < anchors.size(); ++idx) {
    BoxDelta d;
    for (std::size_t k = 0; k < 4; ++k) d[k] = out.deltas.data()[detail::delta_offset(s, n, idx, k)];
    const double score = detail::sigmoid_scalar<double>(out.objectness.data()[detail::objectness_offset(s, n, idx)]);
    dets.push_back({decode_box(anchors[idx], d, std::array<double, 2>{image_w, image_h}), score});
  }
  return dets;
}

}  // namespace acnet
