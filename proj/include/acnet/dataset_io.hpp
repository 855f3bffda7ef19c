#pragma once

// On-disk dataset and detection interchange:
//   <dir>/<split>/manifest.txt      one image file name per line
//   <dir>/<split>/annotations.txt   "image_file x1 y1 x2 y2" per box
//   <dir>/<split>/<name>.ppm        binary PPM (P6, maxval 255)
// Detections: "image_id x1 y1 x2 y2 score" per line; ground truth omits score.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "acnet/synth.hpp"

namespace acnet {

namespace fs = std::filesystem;

inline void write_ppm(const fs::path& path, const Tensor<float>& image) {
  const Shape s = image.shape();
  if (s.n != 1 || s.c != 3) throw InvalidInput("write_ppm: expected a 1x3xHxW image");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("write_ppm: cannot open " + path.string());
  os << "P6\n" << s.w << " " << s.h << "\n255\n";
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(image.at(0, c, y, x)), 0.0, 1.0);
        os.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
      }
    }
  }
  if (!os) throw FormatError("write_ppm: write failed for " + path.string());
}

inline Tensor<float> read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("read_ppm: cannot open " + path.string());
  auto next_token = [&]() {
    std::string tok;
    while (is >> std::ws && is.peek() == '#') {
      std::string skip;
      std::getline(is, skip);
    }
    is >> tok;
    return tok;
  };
  if (next_token() != "P6") throw FormatError("read_ppm: " + path.string() + " is not a binary PPM");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(next_token());
    h = std::stoul(next_token());
    maxval = std::stoul(next_token());
  } catch (const std::exception&) {
    throw FormatError("read_ppm: malformed header in " + path.string());
  }
  if (maxval != 255 || w == 0 || h == 0) throw FormatError("read_ppm: unsupported header in " + path.string());
  is.get();
  Tensor<float> img(Shape{1, 3, h, w});
  std::vector<unsigned char> raw(3 * w * h);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()))) {
    throw FormatError("read_ppm: truncated pixel data in " + path.string());
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) img.at(0, c, y, x) = static_cast<float>(raw[(y * w + x) * 3 + c]) / 255.0f;
    }
  }
  return img;
}

inline std::string sample_name(std::size_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index << ".ppm";
  return os.str();
}

struct NamedSample {
  std::string name;
  SceneSample sample;
};

inline void write_split(const fs::path& dir, const std::string& split, const std::vector<SceneSample>& samples) {
  const fs::path root = dir / split;
  fs::create_directories(root);
  std::ofstream manifest(root / "manifest.txt");
  std::ofstream ann(root / "annotations.txt");
  ann << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string name = sample_name(i);
    write_ppm(root / name, samples[i].image);
    manifest << name << "\n";
    for (const Box& b : samples[i].boxes) ann << name << " " << b.x1 << " " << b.y1 << " " << b.x2 << " " << b.y2 << "\n";
  }
  if (!manifest || !ann) throw FormatError("write_split: failed writing " + root.string());
}

/// Reads a split written by write_split. Masks are re-rasterized at `mask_stride`.
inline std::vector<NamedSample> read_split(const fs::path& dir, const std::string& split, std::size_t mask_stride) {
  const fs::path root = dir / split;
  std::ifstream manifest(root / "manifest.txt");
  if (!manifest) throw FormatError("read_split: missing manifest " + (root / "manifest.txt").string());
  std::vector<NamedSample> out;
  std::map<std::string, std::size_t> index;
  std::string line;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    index[line] = out.size();
    NamedSample ns;
    ns.name = line;
    ns.sample.image = read_ppm(root / line);
    ns.sample.mask_stride = mask_stride;
    out.push_back(std::move(ns));
  }
  std::ifstream ann(root / "annotations.txt");
  if (!ann) throw FormatError("read_split: missing annotations in " + root.string());
  std::size_t lineno = 0;
  while (std::getline(ann, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string name;
    Box b;
    if (!(ls >> name >> b.x1 >> b.y1 >> b.x2 >> b.y2)) {
      throw FormatError("read_split: malformed annotation line " + std::to_string(lineno));
    }
    auto it = index.find(name);
    if (it == index.end()) throw FormatError("read_split: annotation references unknown image " + name);
    out[it->second].sample.boxes.push_back(b);
  }
  for (auto& ns : out) {
    ns.sample.mask = rasterize_mask_label<float>(ns.sample.boxes, ns.sample.height(), ns.sample.width(), mask_stride);
  }
  return out;
}

/// image_id -> detections, in file order.
using DetectionTable = std::map<std::string, std::vector<Detection>>;
using GroundTruthTable = std::map<std::string, std::vector<Box>>;

inline void write_detections(std::ostream& os, const DetectionTable& table) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& [id, dets] : table) {
    for (const auto& d : dets) {
      os << id << " " << d.box.x1 << " " << d.box.y1 << " " << d.box.x2 << " " << d.box.y2 << " " << d.score << "\n";
    }
  }
}

inline DetectionTable read_detections(std::istream& is) {
  DetectionTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    Detection d;
    if (!(ls >> id >> d.box.x1 >> d.box.y1 >> d.box.x2 >> d.box.y2 >> d.score)) {
      throw FormatError("read_detections: malformed line " + std::to_string(lineno));
    }
    table[id].push_back(d);
  }
  return table;
}

inline void write_ground_truth(std::ostream& os, const GroundTruthTable& table) {
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& [id, boxes] : table) {
    for (const auto& b : boxes) os << id << " " << b.x1 << " " << b.y1 << " " << b.x2 << " " << b.y2 << "\n";
  }
}

inline GroundTruthTable read_ground_truth(std::istream& is) {
  GroundTruthTable table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    Box b;
    if (!(ls >> id >> b.x1 >> b.y1 >> b.x2 >> b.y2)) {
      throw FormatError("read_ground_truth: malformed line " + std::to_string(lineno));
    }
    table[id].push_back(b);
  }
  return table;
}

}  // namespace acnet
