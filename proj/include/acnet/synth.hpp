#pragma once

// Synthetic skin-lesion scenes: a skin-toned background under a smooth
// illumination gradient and a random color cast, clustered soft-edged
// reddish blobs of varying size (labelled) and darker round distractors
// (unlabelled).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "acnet/box.hpp"
#include "acnet/mama.hpp"

namespace acnet {

struct SynthConfig {
  std::size_t image_size = 64;
  std::size_t min_objects = 3;
  std::size_t max_objects = 12;
  double min_radius = 2.0;
  double max_radius = 10.0;
  std::size_t min_clusters = 1;
  std::size_t max_clusters = 3;
  double cluster_spread = 6.0;  // std. dev. of blob centers around a cluster center, px
  double max_blob_overlap = 0.4;  // IoU ceiling between labelled blobs
  double illumination = 0.35;   // max relative brightness swing across the image
  double hue_shift = 0.15;      // max per-channel gain deviation
  std::size_t min_distractors = 0;
  std::size_t max_distractors = 3;
  std::size_t mask_stride = 8;
  std::size_t max_attempts = 200;  // placement retries per blob
  std::uint64_t seed = 1;

  void validate() const {
    const char* where = "SynthConfig";
    detail::require(image_size > 0 && image_size % mask_stride == 0, where, "image size must be a positive multiple of mask_stride");
    detail::require(min_objects <= max_objects, where, "empty object-count range");
    detail::require(0.0 < min_radius && min_radius <= max_radius, where, "invalid radius range");
    detail::require(1 <= min_clusters && min_clusters <= max_clusters, where, "invalid cluster range");
    detail::require(min_distractors <= max_distractors, where, "empty distractor range");
    detail::require(cluster_spread > 0.0 && max_attempts > 0, where, "spread and attempts must be positive");
    detail::require(illumination >= 0.0 && illumination < 1.0 && hue_shift >= 0.0 && hue_shift < 1.0, where,
                    "illumination and hue shift must lie in [0, 1)");
  }
};

struct SceneSample {
  Tensor<float> image;  // (1, 3, H, W), values in [0, 1]
  std::vector<Box> boxes;
  Tensor<float> mask;   // (1, 1, H/mask_stride, W/mask_stride)
  std::size_t mask_stride = 8;
  std::uint64_t seed = 0;

  std::size_t height() const { return image.shape().h; }
  std::size_t width() const { return image.shape().w; }
};

namespace detail {

struct Rgb {
  double r, g, b;
};

inline void paint_ellipse(Tensor<float>& img, double cx, double cy, double rx, double ry, Rgb color, double opacity,
                          double hardness) {
  const Shape s = img.shape();
  const long y0 = std::max(0L, static_cast<long>(std::floor(cy - ry)));
  const long y1 = std::min(static_cast<long>(s.h) - 1, static_cast<long>(std::ceil(cy + ry)));
  const long x0 = std::max(0L, static_cast<long>(std::floor(cx - rx)));
  const long x1 = std::min(static_cast<long>(s.w) - 1, static_cast<long>(std::ceil(cx + rx)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const double dx = (static_cast<double>(x) + 0.5 - cx) / rx;
      const double dy = (static_cast<double>(y) + 0.5 - cy) / ry;
      const double d = std::sqrt(dx * dx + dy * dy);
      const double alpha = opacity * std::clamp(hardness * (1.0 - d), 0.0, 1.0);
      if (alpha <= 0.0) continue;
      const double rgb[3] = {color.r, color.g, color.b};
      for (std::size_t c = 0; c < 3; ++c) {
        float& v = img.at(0, c, static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        v = static_cast<float>((1.0 - alpha) * v + alpha * rgb[c]);
      }
    }
  }
}

}  // namespace detail

/// Deterministic in `cfg` (including cfg.seed).
inline SceneSample generate_scene(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  auto uni = [&](double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); };
  auto pick = [&](std::size_t a, std::size_t b) { return std::uniform_int_distribution<std::size_t>(a, b)(rng); };
  std::normal_distribution<double> gauss(0.0, 1.0);

  const std::size_t n = cfg.image_size;
  const double size = static_cast<double>(n);
  SceneSample s;
  s.seed = cfg.seed;
  s.mask_stride = cfg.mask_stride;
  s.image = Tensor<float>(Shape{1, 3, n, n});

  const detail::Rgb skin{0.88 + uni(-0.05, 0.05), 0.70 + uni(-0.05, 0.05), 0.58 + uni(-0.05, 0.05)};
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      s.image.at(0, 0, y, x) = static_cast<float>(skin.r);
      s.image.at(0, 1, y, x) = static_cast<float>(skin.g);
      s.image.at(0, 2, y, x) = static_cast<float>(skin.b);
    }
  }

  // Labelled blobs, sampled around cluster centers.
  const std::size_t count = pick(cfg.min_objects, cfg.max_objects);
  std::vector<std::array<double, 2>> centers(pick(cfg.min_clusters, cfg.max_clusters));
  for (auto& c : centers) c = {uni(0.2 * size, 0.8 * size), uni(0.2 * size, 0.8 * size)};
  for (std::size_t k = 0; k < count; ++k) {
    bool placed = false;
    for (std::size_t attempt = 0; attempt < cfg.max_attempts && !placed; ++attempt) {
      const auto& c = centers[pick(0, centers.size() - 1)];
      const double cx = c[0] + cfg.cluster_spread * gauss(rng);
      const double cy = c[1] + cfg.cluster_spread * gauss(rng);
      const double r = std::exp(uni(std::log(cfg.min_radius), std::log(cfg.max_radius)));
      const double rx = r * uni(0.75, 1.25);
      const double ry = r * uni(0.75, 1.25);
      const Box box{std::floor(cx - rx), std::floor(cy - ry), std::ceil(cx + rx), std::ceil(cy + ry)};
      if (box.x1 < 0.0 || box.y1 < 0.0 || box.x2 > size || box.y2 > size) continue;
      if (box.width() < 2.0 || box.height() < 2.0) continue;
      const bool crowded = std::any_of(s.boxes.begin(), s.boxes.end(),
                                       [&](const Box& o) { return iou(o, box) > cfg.max_blob_overlap; });
      if (crowded) continue;
      const detail::Rgb red{0.78 + uni(-0.08, 0.08), 0.28 + uni(-0.08, 0.08), 0.30 + uni(-0.08, 0.08)};
      detail::paint_ellipse(s.image, cx, cy, rx, ry, red, uni(0.7, 0.95), 2.5);
      s.boxes.push_back(box);
      placed = true;
    }
    if (!placed) {
      throw InvalidInput("generate_scene: could not place blob " + std::to_string(k + 1) + " of " +
                         std::to_string(count) + " after " + std::to_string(cfg.max_attempts) + " attempts");
    }
  }

  // Unlabelled dark distractors kept off the labelled boxes.
  const std::size_t moles = pick(cfg.min_distractors, cfg.max_distractors);
  for (std::size_t k = 0; k < moles; ++k) {
    for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
      const double r = uni(1.5, 3.5);
      const double cx = uni(r, size - r);
      const double cy = uni(r, size - r);
      const Box footprint{cx - r, cy - r, cx + r, cy + r};
      if (std::any_of(s.boxes.begin(), s.boxes.end(), [&](const Box& o) { return iou(o, footprint) > 0.0; })) continue;
      const detail::Rgb brown{0.36 + uni(-0.05, 0.05), 0.22 + uni(-0.04, 0.04), 0.16 + uni(-0.04, 0.04)};
      detail::paint_ellipse(s.image, cx, cy, r, r * uni(0.9, 1.1), brown, 0.95, 4.0);
      break;
    }
  }

  // Illumination gradient, color cast and sensor noise.
  const double theta = uni(0.0, 2.0 * std::numbers::pi);
  const double swing = uni(0.0, cfg.illumination);
  const double gains[3] = {1.0 + uni(-cfg.hue_shift, cfg.hue_shift), 1.0 + uni(-cfg.hue_shift, cfg.hue_shift),
                           1.0 + uni(-cfg.hue_shift, cfg.hue_shift)};
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / size - 0.5;
      const double v = (static_cast<double>(y) + 0.5) / size - 0.5;
      const double light = 1.0 + 2.0 * swing * (u * std::cos(theta) + v * std::sin(theta));
      for (std::size_t c = 0; c < 3; ++c) {
        float& px = s.image.at(0, c, y, x);
        px = static_cast<float>(std::clamp(px * light * gains[c] + 0.015 * gauss(rng), 0.0, 1.0));
      }
    }
  }

  s.mask = rasterize_mask_label<float>(s.boxes, n, n, cfg.mask_stride);
  return s;
}

namespace detail {

// Tile origins along one axis: k·(tile − overlap), with the last tile flush to the border.
inline std::vector<std::size_t> tile_offsets(std::size_t extent, std::size_t tile, std::size_t overlap) {
  if (extent <= tile) return {0};
  const std::size_t step = tile - overlap;
  std::vector<std::size_t> offs;
  for (std::size_t o = 0;; o += step) {
    if (o + tile >= extent) {
      offs.push_back(extent - tile);
      break;
    }
    offs.push_back(o);
  }
  offs.erase(std::unique(offs.begin(), offs.end()), offs.end());
  return offs;
}

}  // namespace detail

inline constexpr double kTileBoxRetention = 0.25;

/// Overlapping tile crops. Boxes are clipped to each tile and kept when at
/// least 25% of their area survives; masks are re-rasterized from the kept
/// boxes. Axes no longer than `tile` are not cropped.
inline std::vector<SceneSample> crop_tiles(const SceneSample& s, std::size_t tile, std::size_t overlap) {
  detail::require(tile > 0 && overlap < tile, "crop_tiles", "require 0 <= overlap < tile");
  const std::size_t h = s.height();
  const std::size_t w = s.width();
  if (h <= tile && w <= tile) return {s};
  const auto ys = detail::tile_offsets(h, tile, overlap);
  const auto xs = detail::tile_offsets(w, tile, overlap);
  const std::size_t th = std::min(h, tile);
  const std::size_t tw = std::min(w, tile);
  std::vector<SceneSample> tiles;
  for (std::size_t oy : ys) {
    for (std::size_t ox : xs) {
      SceneSample t;
      t.seed = s.seed;
      t.mask_stride = s.mask_stride;
      t.image = Tensor<float>(Shape{1, 3, th, tw});
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t y = 0; y < th; ++y) {
          for (std::size_t x = 0; x < tw; ++x) t.image.at(0, c, y, x) = s.image.at(0, c, oy + y, ox + x);
        }
      }
      const Box window{static_cast<double>(ox), static_cast<double>(oy), static_cast<double>(ox + tw),
                       static_cast<double>(oy + th)};
      for (const Box& b : s.boxes) {
        const Box clipped{std::max(b.x1, window.x1), std::max(b.y1, window.y1), std::min(b.x2, window.x2),
                          std::min(b.y2, window.y2)};
        if (!clipped.valid() || clipped.area() < kTileBoxRetention * b.area()) continue;
        t.boxes.push_back({clipped.x1 - window.x1, clipped.y1 - window.y1, clipped.x2 - window.x1,
                           clipped.y2 - window.y1});
      }
      t.mask = rasterize_mask_label<float>(t.boxes, th, tw, s.mask_stride);
      tiles.push_back(std::move(t));
    }
  }
  return tiles;
}

/// Scene seed for sample `index` of a split, decorrelated with splitmix64.
inline std::uint64_t scene_seed(std::uint64_t base, std::uint64_t split, std::uint64_t index) {
  std::uint64_t z = base * 0x9E3779B97F4A7C15ULL + split * 0xD1B54A32D192ED03ULL + index + 1;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// `count` scenes drawn with `cfg` and per-sample seeds from scene_seed(base_seed, split, i).
inline std::vector<SceneSample> generate_split(SynthConfig cfg, std::uint64_t base_seed, std::uint64_t split,
                                               std::size_t count) {
  std::vector<SceneSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    cfg.seed = scene_seed(base_seed, split, i);
    out.push_back(generate_scene(cfg));
  }
  return out;
}

/// Mirror about the vertical axis: (x1, y1, x2, y2) -> (W - x2, y1, W - x1, y2).
inline SceneSample hflip(const SceneSample& s) {
  SceneSample f;
  f.seed = s.seed;
  f.mask_stride = s.mask_stride;
  const Shape is = s.image.shape();
  f.image = Tensor<float>(is);
  for (std::size_t c = 0; c < is.c; ++c) {
    for (std::size_t y = 0; y < is.h; ++y) {
      for (std::size_t x = 0; x < is.w; ++x) f.image.at(0, c, y, is.w - 1 - x) = s.image.at(0, c, y, x);
    }
  }
  const double width = static_cast<double>(is.w);
  for (const Box& b : s.boxes) f.boxes.push_back({width - b.x2, b.y1, width - b.x1, b.y2});
  const Shape ms = s.mask.shape();
  f.mask = Tensor<float>(ms);
  for (std::size_t y = 0; y < ms.h; ++y) {
    for (std::size_t x = 0; x < ms.w; ++x) f.mask.at(0, 0, y, ms.w - 1 - x) = s.mask.at(0, 0, y, x);
  }
  return f;
}

}  // namespace acnet
