#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "acnet/box.hpp"

namespace acnet {

enum class SoftNmsMethod { linear, gaussian };

struct SoftNmsConfig {
  SoftNmsMethod method = SoftNmsMethod::gaussian;
  double iou_thr = 0.3;  // linear method only
  double sigma = 0.5;    // gaussian method only
  double score_thr = 0.001;
};

struct SoftNmsPick {
  std::size_t index;  // position in the input list
  double score;       // decayed score at selection time
};

/// Iterative max-score selection with score decay of the remaining boxes:
/// linear s·(1 - IoU) when IoU > iou_thr, gaussian s·exp(-IoU²/σ). A box is
/// dropped once its decayed score falls below score_thr. Equal scores are
/// resolved by input index. Picks come out in non-increasing score order.
inline std::vector<SoftNmsPick> soft_nms_select(const std::vector<Detection>& dets, const SoftNmsConfig& cfg) {
  std::vector<std::size_t> alive;
  std::vector<double> score(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i) {
    score[i] = dets[i].score;
    if (score[i] >= cfg.score_thr) alive.push_back(i);
  }
  std::vector<SoftNmsPick> picks;
  while (!alive.empty()) {
    auto best = alive.begin();
    for (auto it = alive.begin(); it != alive.end(); ++it) {
      if (score[*it] > score[*best]) best = it;
    }
    const std::size_t top = *best;
    alive.erase(best);
    picks.push_back({top, score[top]});
    std::vector<std::size_t> keep;
    keep.reserve(alive.size());
    for (std::size_t i : alive) {
      const double o = iou(dets[top].box, dets[i].box);
      if (cfg.method == SoftNmsMethod::linear) {
        if (o > cfg.iou_thr) score[i] *= 1.0 - o;
      } else {
        score[i] *= std::exp(-(o * o) / cfg.sigma);
      }
      if (score[i] >= cfg.score_thr) keep.push_back(i);
    }
    alive = std::move(keep);
  }
  return picks;
}

inline std::vector<Detection> soft_nms(const std::vector<Detection>& dets, const SoftNmsConfig& cfg = {}) {
  std::vector<Detection> out;
  for (const auto& p : soft_nms_select(dets, cfg)) out.push_back({dets[p.index].box, p.score});
  return out;
}

/// Detections and ground truth of one image.
struct ImageEval {
  std::vector<Detection> detections;
  std::vector<Box> ground_truth;
};

/// All-point interpolated AP over a set of images pooled into one PR curve.
///
/// Detections are processed in descending score order (input position breaks
/// ties). Each detection targets its highest-IoU ground-truth box in the same
/// image; it is a true positive if that IoU is >= iou_thr and the box is not
/// yet matched. A PR point is recorded after each group of equal scores, which
/// makes the result independent of the order of tied detections.
///
/// No ground truth anywhere: 1 if there are also no detections, else 0.
inline double average_precision(const std::vector<ImageEval>& images, double iou_thr = 0.5) {
  struct Ref {
    double score;
    std::size_t image;
    std::size_t det;
  };
  std::vector<Ref> order;
  std::size_t total_gt = 0;
  for (std::size_t im = 0; im < images.size(); ++im) {
    total_gt += images[im].ground_truth.size();
    for (std::size_t d = 0; d < images[im].detections.size(); ++d) order.push_back({images[im].detections[d].score, im, d});
  }
  if (total_gt == 0) return order.empty() ? 1.0 : 0.0;
  std::stable_sort(order.begin(), order.end(), [](const Ref& a, const Ref& b) { return a.score > b.score; });

  std::vector<std::vector<bool>> matched(images.size());
  for (std::size_t im = 0; im < images.size(); ++im) matched[im].assign(images[im].ground_truth.size(), false);

  std::vector<double> recall, precision;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto& r = order[i];
    const auto& img = images[r.image];
    double best = 0.0;
    std::size_t best_gt = 0;
    for (std::size_t g = 0; g < img.ground_truth.size(); ++g) {
      const double o = iou(img.detections[r.det].box, img.ground_truth[g]);
      if (o > best) {
        best = o;
        best_gt = g;
      }
    }
    if (best >= iou_thr && best > 0.0 && !matched[r.image][best_gt]) {
      matched[r.image][best_gt] = true;
      ++tp;
    }
    const bool group_end = i + 1 == order.size() || order[i + 1].score != r.score;
    if (group_end) {
      recall.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
      precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
    }
  }

  // Precision envelope from the right, then area under the step curve.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

inline double average_precision(const std::vector<Detection>& dets, const std::vector<Box>& gts, double iou_thr = 0.5) {
  return average_precision(std::vector<ImageEval>{{dets, gts}}, iou_thr);
}

/// Mean over classes of the pooled AP. There is a single foreground class,
/// so this equals average_precision over all images.
inline double mean_average_precision(const std::vector<ImageEval>& images, double iou_thr = 0.5) {
  return average_precision(images, iou_thr);
}

}  // namespace acnet
