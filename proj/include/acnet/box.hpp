#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

#include "acnet/error.hpp"

namespace acnet {

/// Axis-aligned rectangle in image pixels (continuous coordinates).
struct Box {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) && x1 < x2 && y1 < y2;
  }
  bool contains(double x, double y) const { return x1 <= x && x <= x2 && y1 <= y && y <= y2; }

  friend bool operator==(const Box&, const Box&) = default;
};

struct Detection {
  Box box;
  double score = 0.0;
};

using BoxDelta = std::array<double, 4>;  // (tx, ty, tw, th)

inline double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

inline Box clip_box(const Box& b, double width, double height) {
  return {std::clamp(b.x1, 0.0, width), std::clamp(b.y1, 0.0, height), std::clamp(b.x2, 0.0, width),
          std::clamp(b.y2, 0.0, height)};
}

/// Center/log-size regression target of `gt` relative to `anchor`.
inline BoxDelta encode_box(const Box& anchor, const Box& gt) {
  if (!(anchor.width() > 0.0 && anchor.height() > 0.0)) throw InvalidInput("encode_box: anchor has non-positive size");
  if (!(gt.width() > 0.0 && gt.height() > 0.0)) throw InvalidInput("encode_box: target has non-positive size");
  return {(gt.cx() - anchor.cx()) / anchor.width(), (gt.cy() - anchor.cy()) / anchor.height(),
          std::log(gt.width() / anchor.width()), std::log(gt.height() / anchor.height())};
}

// Upper bound on the log-size deltas applied in decode_box, log(1000 / 16).
inline constexpr double kMaxLogScale = 4.135166556742356;

/// Inverse of encode_box; clips to [0, width] x [0, height] when an image size is given.
inline Box decode_box(const Box& anchor, const BoxDelta& d, std::optional<std::array<double, 2>> image_wh = std::nullopt) {
  if (!(anchor.width() > 0.0 && anchor.height() > 0.0)) throw InvalidInput("decode_box: anchor has non-positive size");
  const double cx = anchor.cx() + d[0] * anchor.width();
  const double cy = anchor.cy() + d[1] * anchor.height();
  const double w = anchor.width() * std::exp(std::min(d[2], kMaxLogScale));
  const double h = anchor.height() * std::exp(std::min(d[3], kMaxLogScale));
  Box b{cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  if (image_wh) b = clip_box(b, (*image_wh)[0], (*image_wh)[1]);
  return b;
}

}  // namespace acnet
