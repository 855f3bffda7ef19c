#pragma once

// Reference implementations used only by tests. They are deliberately naive
// (scalar loops, explicit enumeration) and share no code with the library
// beyond the plain Box/Detection/Tensor containers.

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>
#include <vector>

#include "acnet/acnet.hpp"

namespace oracle {

using acnet::Box;
using acnet::Detection;
using acnet::Shape;
using acnet::Tensor;

/// Direct nested-loop cross-correlation with zero padding.
inline std::vector<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>* bias,
                                  std::size_t stride, std::size_t pad_h, std::size_t pad_w, std::size_t dil,
                                  Shape* out_shape = nullptr) {
  const Shape xs = x.shape(), ws = w.shape();
  const long oh = (static_cast<long>(xs.h) + 2 * static_cast<long>(pad_h) - static_cast<long>(dil * (ws.h - 1)) - 1) /
                      static_cast<long>(stride) + 1;
  const long ow = (static_cast<long>(xs.w) + 2 * static_cast<long>(pad_w) - static_cast<long>(dil * (ws.w - 1)) - 1) /
                      static_cast<long>(stride) + 1;
  std::vector<double> out(xs.n * ws.n * oh * ow, 0.0);
  for (std::size_t n = 0; n < xs.n; ++n)
    for (std::size_t co = 0; co < ws.n; ++co)
      for (long i = 0; i < oh; ++i)
        for (long j = 0; j < ow; ++j) {
          double acc = bias ? bias->data()[co] : 0.0;
          for (std::size_t ci = 0; ci < xs.c; ++ci)
            for (std::size_t a = 0; a < ws.h; ++a)
              for (std::size_t b = 0; b < ws.w; ++b) {
                const long y = i * static_cast<long>(stride) - static_cast<long>(pad_h) + static_cast<long>(a * dil);
                const long xx = j * static_cast<long>(stride) - static_cast<long>(pad_w) + static_cast<long>(b * dil);
                if (y < 0 || xx < 0 || y >= static_cast<long>(xs.h) || xx >= static_cast<long>(xs.w)) continue;
                acc += x.at(n, ci, y, xx) * w.at(co, ci, a, b);
              }
          out[((n * ws.n + co) * oh + i) * ow + j] = acc;
        }
  if (out_shape) *out_shape = {xs.n, ws.n, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
  return out;
}

/// One bilinear sample at output (i, j) under half-pixel centers, clamped at the border.
inline double bilinear_at(const Tensor<double>& x, std::size_t n, std::size_t c, std::size_t i, std::size_t j,
                          std::size_t oh, std::size_t ow) {
  const Shape s = x.shape();
  auto src = [](std::size_t o, std::size_t in, std::size_t out) {
    const double v = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(v, 0.0, static_cast<double>(in) - 1.0);
  };
  const double sy = src(i, s.h, oh), sx = src(j, s.w, ow);
  const auto y0 = static_cast<std::size_t>(std::floor(sy)), x0 = static_cast<std::size_t>(std::floor(sx));
  const std::size_t y1 = std::min(y0 + 1, s.h - 1), x1 = std::min(x0 + 1, s.w - 1);
  const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
  return (1 - fy) * ((1 - fx) * x.at(n, c, y0, x0) + fx * x.at(n, c, y0, x1)) +
         fy * ((1 - fx) * x.at(n, c, y1, x0) + fx * x.at(n, c, y1, x1));
}

/// Mean of input window [floor(i·H/oh), ceil((i+1)·H/oh)) x [...] by explicit enumeration.
inline double adaptive_cell(const Tensor<double>& x, std::size_t n, std::size_t c, std::size_t i, std::size_t j,
                            std::size_t oh, std::size_t ow) {
  const Shape s = x.shape();
  const std::size_t y0 = i * s.h / oh, y1 = ((i + 1) * s.h + oh - 1) / oh;
  const std::size_t x0 = j * s.w / ow, x1 = ((j + 1) * s.w + ow - 1) / ow;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t xx = x0; xx < x1; ++xx) {
      acc += x.at(n, c, y, xx);
      ++count;
    }
  return acc / static_cast<double>(count);
}

/// IoU from explicit overlap lengths.
inline double iou(const Box& a, const Box& b) {
  const double ox = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const double oy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = ox * oy;
  const double area_a = (a.x2 - a.x1) * (a.y2 - a.y1), area_b = (b.x2 - b.x1) * (b.y2 - b.y1);
  const double uni = area_a + area_b - inter;
  return inter > 0.0 ? inter / uni : 0.0;
}

struct ImageCase {
  std::vector<Detection> dets;
  std::vector<Box> gts;
};

/// AP by enumerating every distinct score threshold t. For the detections
/// with score >= t, each one names its highest-IoU ground truth (lowest index
/// on ties); a ground truth counts as found when at least one detection names
/// it with IoU >= thr, and every other detection is a false positive. The
/// curve is then integrated with the all-point rule: each recall increment is
/// weighted by the best precision at any threshold reaching that recall.
inline double oracle_map(const std::vector<ImageCase>& images, double thr) {
  std::size_t total_gt = 0;
  std::set<double, std::greater<>> thresholds;
  for (const auto& im : images) {
    total_gt += im.gts.size();
    for (const auto& d : im.dets) thresholds.insert(d.score);
  }
  if (total_gt == 0) return thresholds.empty() ? 1.0 : 0.0;
  std::vector<std::pair<double, double>> pr;  // (recall, precision), by descending threshold
  for (double t : thresholds) {
    std::size_t selected = 0, found = 0;
    for (const auto& im : images) {
      std::vector<bool> hit(im.gts.size(), false);
      for (const auto& d : im.dets) {
        if (d.score < t) continue;
        ++selected;
        int best = -1;
        double best_iou = 0.0;
        for (std::size_t g = 0; g < im.gts.size(); ++g) {
          const double v = oracle::iou(d.box, im.gts[g]);
          if (v > best_iou) {
            best_iou = v;
            best = static_cast<int>(g);
          }
        }
        if (best >= 0 && best_iou >= thr) hit[best] = true;
      }
      found += static_cast<std::size_t>(std::count(hit.begin(), hit.end(), true));
    }
    pr.emplace_back(static_cast<double>(found) / total_gt, static_cast<double>(found) / selected);
  }
  double ap = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    double best = 0.0;
    for (const auto& [r, p] : pr) {
      if (r >= pr[i].first) best = std::max(best, p);
    }
    ap += (pr[i].first - prev) * best;
    prev = pr[i].first;
  }
  return ap;
}

/// Label table from an explicit IoU matrix.
inline std::vector<acnet::AnchorLabel> assign(const std::vector<Box>& anchors, const std::vector<Box>& gts, double pos,
                                              double neg) {
  using acnet::AnchorLabel;
  const std::size_t na = anchors.size(), ng = gts.size();
  std::vector<std::vector<double>> m(na, std::vector<double>(ng));
  for (std::size_t a = 0; a < na; ++a)
    for (std::size_t g = 0; g < ng; ++g) m[a][g] = oracle::iou(anchors[a], gts[g]);
  std::vector<AnchorLabel> out(na);
  for (std::size_t a = 0; a < na; ++a) {
    double row_max = 0.0;
    for (std::size_t g = 0; g < ng; ++g) row_max = std::max(row_max, m[a][g]);
    bool forced = false;
    for (std::size_t g = 0; g < ng; ++g) {
      double col_max = 0.0;
      for (std::size_t b = 0; b < na; ++b) col_max = std::max(col_max, m[b][g]);
      if (col_max > 0.0 && m[a][g] == col_max) forced = true;
    }
    if (ng > 0 && (row_max >= pos || forced)) {
      out[a] = AnchorLabel::positive;
    } else if (ng == 0 || row_max < neg) {
      out[a] = AnchorLabel::negative;
    } else {
      out[a] = AnchorLabel::ignore;
    }
  }
  return out;
}

/// Greedy hard NMS: visit by descending score (input order on ties), drop any
/// box overlapping an already kept one. Returns kept input indices.
inline std::vector<std::size_t> hard_nms(const std::vector<Detection>& dets, double overlap_above) {
  std::vector<std::size_t> order(dets.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return dets[a].score > dets[b].score; });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool ok = true;
    for (std::size_t k : kept) ok = ok && oracle::iou(dets[i].box, dets[k].box) <= overlap_above;
    if (ok) kept.push_back(i);
  }
  return kept;
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

/// Squeeze-and-excitation scores evaluated scalar by scalar for image n.
inline std::vector<double> channel_attention(const Tensor<double>& f, const Tensor<double>& w1,
                                             const Tensor<double>& w2, std::size_t n) {
  const Shape s = f.shape();
  std::vector<double> z(s.c, 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    for (std::size_t i = 0; i < s.h; ++i)
      for (std::size_t j = 0; j < s.w; ++j) z[c] += f.at(n, c, i, j);
    z[c] /= static_cast<double>(s.h * s.w);
  }
  const std::size_t hidden = w1.shape().n;
  std::vector<double> u(hidden, 0.0);
  for (std::size_t k = 0; k < hidden; ++k) {
    for (std::size_t c = 0; c < s.c; ++c) u[k] += w1.data()[k * s.c + c] * z[c];
    u[k] = std::max(0.0, u[k]);
  }
  std::vector<double> alpha(s.c, 0.0);
  for (std::size_t c = 0; c < s.c; ++c) {
    double v = 0.0;
    for (std::size_t k = 0; k < hidden; ++k) v += w2.data()[c * hidden + k] * u[k];
    alpha[c] = sigmoid(v);
  }
  return alpha;
}

inline double bce(double p, double y) {
  p = std::clamp(p, 1e-7, 1.0 - 1e-7);
  return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

inline double smooth_l1(double x) { return std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5; }

/// Random box with integer corners inside [0, extent).
template <class R>
Box random_box(R& rng, int extent, int min_side = 1, int max_side = 0) {
  if (max_side <= 0) max_side = extent;
  std::uniform_int_distribution<int> side(min_side, std::min(max_side, extent));
  const int w = side(rng), h = side(rng);
  std::uniform_int_distribution<int> px(0, extent - w), py(0, extent - h);
  const int x = px(rng), y = py(rng);
  return {double(x), double(y), double(x + w), double(y + h)};
}

inline bool tensors_equal(const Tensor<double>& a, const Tensor<double>& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  return m;
}

inline double max_abs_diff(const Tensor<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b[i]));
  return m;
}

}  // namespace oracle
