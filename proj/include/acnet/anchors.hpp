#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "acnet/box.hpp"

namespace acnet {

struct AnchorConfig {
  std::size_t stride = 8;
  std::vector<double> ratios{0.5, 1.0, 2.0};  // width / height
  std::vector<double> scales{0.125, 0.25, 0.5, 1.0};
  double base_size = 32.0;
  double pos_iou = 0.7;
  double neg_iou = 0.3;

  std::size_t per_location() const { return ratios.size() * scales.size(); }

  /// Anchor stride 8, ratios {0.5, 1, 2}, scales 2^-3..2^0 on a 256-pixel base.
  static AnchorConfig reference() {
    AnchorConfig c;
    c.base_size = 256.0;
    return c;
  }
};

/// One anchor per (grid cell, ratio, scale), ordered cell-major then ratio then
/// scale. Each anchor has area (base·scale)², width/height = ratio, and is
/// centered on ((j + 0.5)·stride, (i + 0.5)·stride). Anchors are not clipped.
inline std::vector<Box> generate_anchors(std::size_t image_h, std::size_t image_w, const AnchorConfig& cfg) {
  if (cfg.stride == 0 || image_h % cfg.stride != 0 || image_w % cfg.stride != 0) {
    throw InvalidInput("generate_anchors: stride " + std::to_string(cfg.stride) + " does not divide image size " +
                       std::to_string(image_h) + "x" + std::to_string(image_w));
  }
  const std::size_t gh = image_h / cfg.stride;
  const std::size_t gw = image_w / cfg.stride;
  std::vector<Box> anchors;
  anchors.reserve(gh * gw * cfg.per_location());
  for (std::size_t i = 0; i < gh; ++i) {
    for (std::size_t j = 0; j < gw; ++j) {
      const double cx = (static_cast<double>(j) + 0.5) * static_cast<double>(cfg.stride);
      const double cy = (static_cast<double>(i) + 0.5) * static_cast<double>(cfg.stride);
      for (double ratio : cfg.ratios) {
        for (double scale : cfg.scales) {
          const double side = cfg.base_size * scale;
          const double w = side * std::sqrt(ratio);
          const double h = side / std::sqrt(ratio);
          anchors.push_back({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h});
        }
      }
    }
  }
  return anchors;
}

enum class AnchorLabel : std::int8_t { ignore = -1, negative = 0, positive = 1 };

struct AnchorSet {
  std::vector<Box> anchors;
  std::vector<AnchorLabel> labels;
  std::vector<BoxDelta> targets;  // meaningful for positives only
  std::size_t n_cls = 0;          // non-ignored anchors
  std::size_t n_reg = 0;          // positives
};

/// Positive if IoU >= pos_thr with some GT or if the anchor attains a GT's
/// (non-zero) best IoU; negative if max IoU < neg_thr; otherwise ignored.
/// Regression targets use the anchor's best-IoU GT (lowest index on ties).
inline AnchorSet assign_anchors(const std::vector<Box>& anchors, const std::vector<Box>& gts, double pos_thr,
                                double neg_thr) {
  if (!(0.0 <= neg_thr && neg_thr <= pos_thr && pos_thr <= 1.0)) {
    throw InvalidInput("assign_anchors: thresholds must satisfy 0 <= neg <= pos <= 1");
  }
  AnchorSet set;
  set.anchors = anchors;
  set.labels.assign(anchors.size(), AnchorLabel::negative);
  set.targets.assign(anchors.size(), BoxDelta{0, 0, 0, 0});

  std::vector<double> best_iou(anchors.size(), 0.0);
  std::vector<std::size_t> best_gt(anchors.size(), 0);
  std::vector<double> gt_best(gts.size(), 0.0);
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const double v = iou(anchors[a], gts[g]);
      if (v > best_iou[a]) {
        best_iou[a] = v;
        best_gt[a] = g;
      }
      gt_best[g] = std::max(gt_best[g], v);
    }
  }
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (gts.empty()) break;
    if (best_iou[a] >= pos_thr) {
      set.labels[a] = AnchorLabel::positive;
    } else if (best_iou[a] >= neg_thr) {
      set.labels[a] = AnchorLabel::ignore;
    }
  }
  for (std::size_t g = 0; g < gts.size(); ++g) {
    if (gt_best[g] <= 0.0) continue;
    for (std::size_t a = 0; a < anchors.size(); ++a) {
      if (iou(anchors[a], gts[g]) == gt_best[g]) set.labels[a] = AnchorLabel::positive;
    }
  }
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    if (set.labels[a] == AnchorLabel::positive) {
      set.targets[a] = encode_box(anchors[a], gts[best_gt[a]]);
      ++set.n_reg;
    }
    if (set.labels[a] != AnchorLabel::ignore) ++set.n_cls;
  }
  return set;
}

}  // namespace acnet
