#pragma once

// Run configuration read from INI-style text:
//
//   [data]     train_images, test_images, seed, image_size, min_objects, ...
//   [model]    cb, frm, dce, mama, stages = 16:2,32:2,64:2,128:2, stem_channels, dce_reduction
//   [anchors]  stride, base_size, ratios, scales, pos_iou, neg_iou
//   [train]    epochs, base_lr, lr_decay_factor, decay_every_epochs, momentum,
//              weight_decay, batch_size, seed, hflip
//   [nms]      method = gaussian|linear, iou_thr, sigma, score_thr, pre_nms_top_k, max_detections
//   [eval]     iou_thr
//
// Unknown sections or keys are rejected so that typos do not silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "acnet/model.hpp"
#include "acnet/postprocess.hpp"
#include "acnet/synth.hpp"

namespace acnet {

struct DataConfig {
  std::size_t train_images = 200;
  std::size_t test_images = 50;
  std::uint64_t seed = 7;
  SynthConfig scene;
};

struct TrainConfig {
  std::size_t epochs = 30;
  double base_lr = 1e-4;
  double lr_decay_factor = 10.0;
  std::size_t decay_every_epochs = 10;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  bool hflip = true;

  void validate() const {
    const char* where = "TrainConfig";
    detail::require(epochs >= 1, where, "epochs must be >= 1");
    detail::require(base_lr > 0.0 && std::isfinite(base_lr), where, "base_lr must be positive");
    detail::require(lr_decay_factor > 0.0, where, "lr_decay_factor must be positive");
    detail::require(decay_every_epochs >= 1, where, "decay_every_epochs must be >= 1");
    detail::require(momentum >= 0.0 && momentum < 1.0, where, "momentum must lie in [0, 1)");
    detail::require(weight_decay >= 0.0, where, "weight_decay must be non-negative");
    detail::require(batch_size >= 1, where, "batch_size must be >= 1");
  }
};

struct EvalConfig {
  SoftNmsConfig nms;
  std::size_t pre_nms_top_k = 300;
  std::size_t max_detections = 100;
  double iou_thr = 0.5;
};

struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;

  void validate() const {
    data.scene.validate();
    model.validate();
    train.validate();
    detail::require(eval.nms.sigma > 0.0 && eval.nms.score_thr >= 0.0, "EvalConfig", "invalid suppression settings");
    detail::require(eval.iou_thr > 0.0 && eval.iou_thr <= 1.0, "EvalConfig", "iou_thr must lie in (0, 1]");
    detail::require(data.scene.image_size % model.backbone.total_stride() == 0, "RunConfig",
                    "image size must be divisible by the backbone stride");
  }
};

namespace detail {

inline std::vector<double> parse_list(const std::string& text, const std::string& key) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (item.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidInput("config: bad number '" + item + "' in " + key);
    }
  }
  if (out.empty()) throw InvalidInput("config: empty list for " + key);
  return out;
}

inline std::string format_list(const std::vector<double>& v) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

inline std::vector<StageSpec> parse_stages(const std::string& text) {
  std::vector<StageSpec> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    try {
      if (colon == std::string::npos) throw std::invalid_argument(item);
      out.push_back({std::stoul(item.substr(0, colon)), std::stoul(item.substr(colon + 1))});
    } catch (const std::exception&) {
      throw InvalidInput("config: bad stage '" + item + "' (expected channels:stride)");
    }
  }
  return out;
}

inline std::string format_stages(const std::vector<StageSpec>& stages) {
  std::string s;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    s += (i ? "," : "") + std::to_string(stages[i].channels) + ":" + std::to_string(stages[i].stride);
  }
  return s;
}

// Typed reads that record which keys were consumed.
class IniReader {
 public:
  explicit IniReader(const boost::property_tree::ptree& pt) : pt_(pt) {}

  template <class V>
  void get(const std::string& section, const std::string& key, V& value) {
    const std::string path = section + "." + key;
    used_.insert(path);
    auto node = pt_.get_optional<std::string>(boost::property_tree::ptree::path_type(path, '.'));
    if (!node) return;
    std::string raw = *node;
    if constexpr (std::is_same_v<V, bool>) {
      if (raw == "true" || raw == "1" || raw == "on" || raw == "yes") {
        value = true;
      } else if (raw == "false" || raw == "0" || raw == "off" || raw == "no") {
        value = false;
      } else {
        throw InvalidInput("config: " + path + " is not a boolean: '" + raw + "'");
      }
    } else if constexpr (std::is_same_v<V, std::string>) {
      value = raw;
    } else {
      std::istringstream is(raw);
      V parsed{};
      if (!(is >> parsed) || !(is >> std::ws).eof()) {
        throw InvalidInput("config: " + path + " has invalid value '" + raw + "'");
      }
      if constexpr (std::is_unsigned_v<V>) {
        if (raw.find('-') != std::string::npos) throw InvalidInput("config: " + path + " must be non-negative");
      }
      value = parsed;
    }
  }

  std::optional<std::string> raw(const std::string& section, const std::string& key) {
    const std::string path = section + "." + key;
    used_.insert(path);
    auto v = pt_.get_optional<std::string>(boost::property_tree::ptree::path_type(path, '.'));
    return v ? std::optional<std::string>(*v) : std::nullopt;
  }

  void reject_unknown() const {
    for (const auto& [section, body] : pt_) {
      if (body.empty() && !body.data().empty()) throw InvalidInput("config: key '" + section + "' outside a section");
      for (const auto& [key, value] : body) {
        if (!used_.count(section + "." + key)) throw InvalidInput("config: unknown key [" + section + "] " + key);
      }
    }
  }

 private:
  const boost::property_tree::ptree& pt_;
  std::set<std::string> used_;
};

}  // namespace detail

inline RunConfig parse_config(std::istream& is) {
  boost::property_tree::ptree pt;
  try {
    boost::property_tree::ini_parser::read_ini(is, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw InvalidInput(std::string("config: ") + e.what());
  }
  RunConfig c;
  detail::IniReader r(pt);

  auto& s = c.data.scene;
  r.get("data", "train_images", c.data.train_images);
  r.get("data", "test_images", c.data.test_images);
  r.get("data", "seed", c.data.seed);
  r.get("data", "image_size", s.image_size);
  r.get("data", "min_objects", s.min_objects);
  r.get("data", "max_objects", s.max_objects);
  r.get("data", "min_radius", s.min_radius);
  r.get("data", "max_radius", s.max_radius);
  r.get("data", "min_clusters", s.min_clusters);
  r.get("data", "max_clusters", s.max_clusters);
  r.get("data", "cluster_spread", s.cluster_spread);
  r.get("data", "max_blob_overlap", s.max_blob_overlap);
  r.get("data", "illumination", s.illumination);
  r.get("data", "hue_shift", s.hue_shift);
  r.get("data", "min_distractors", s.min_distractors);
  r.get("data", "max_distractors", s.max_distractors);
  r.get("data", "max_attempts", s.max_attempts);

  auto& m = c.model;
  r.get("model", "cb", m.flags.cb);
  r.get("model", "frm", m.flags.frm);
  r.get("model", "dce", m.flags.dce);
  r.get("model", "mama", m.flags.mama);
  if (auto v = r.raw("model", "stages")) m.backbone.stages = detail::parse_stages(*v);
  r.get("model", "stem_channels", m.backbone.stem_channels);
  r.get("model", "dce_reduction", m.dce_reduction);

  r.get("anchors", "stride", m.anchors.stride);
  r.get("anchors", "base_size", m.anchors.base_size);
  if (auto v = r.raw("anchors", "ratios")) m.anchors.ratios = detail::parse_list(*v, "anchors.ratios");
  if (auto v = r.raw("anchors", "scales")) m.anchors.scales = detail::parse_list(*v, "anchors.scales");
  r.get("anchors", "pos_iou", m.anchors.pos_iou);
  r.get("anchors", "neg_iou", m.anchors.neg_iou);

  auto& t = c.train;
  r.get("train", "epochs", t.epochs);
  r.get("train", "base_lr", t.base_lr);
  r.get("train", "lr_decay_factor", t.lr_decay_factor);
  r.get("train", "decay_every_epochs", t.decay_every_epochs);
  r.get("train", "momentum", t.momentum);
  r.get("train", "weight_decay", t.weight_decay);
  r.get("train", "batch_size", t.batch_size);
  r.get("train", "seed", t.seed);
  r.get("train", "hflip", t.hflip);

  auto& e = c.eval;
  if (auto v = r.raw("nms", "method")) {
    if (*v == "gaussian") {
      e.nms.method = SoftNmsMethod::gaussian;
    } else if (*v == "linear") {
      e.nms.method = SoftNmsMethod::linear;
    } else {
      throw InvalidInput("config: nms.method must be gaussian or linear, got '" + *v + "'");
    }
  }
  r.get("nms", "iou_thr", e.nms.iou_thr);
  r.get("nms", "sigma", e.nms.sigma);
  r.get("nms", "score_thr", e.nms.score_thr);
  r.get("nms", "pre_nms_top_k", e.pre_nms_top_k);
  r.get("nms", "max_detections", e.max_detections);
  r.get("eval", "iou_thr", e.iou_thr);

  r.reject_unknown();
  c.model.backbone.validate();
  c.validate();
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InvalidInput("config: cannot open " + path.string());
  return parse_config(is);
}

/// Canonical text form; parse_config(to_ini(c)) reproduces c.
inline std::string to_ini(const RunConfig& c) {
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << std::boolalpha;
  const auto& s = c.data.scene;
  os << "[data]\n"
     << "train_images = " << c.data.train_images << "\n"
     << "test_images = " << c.data.test_images << "\n"
     << "seed = " << c.data.seed << "\n"
     << "image_size = " << s.image_size << "\n"
     << "min_objects = " << s.min_objects << "\n"
     << "max_objects = " << s.max_objects << "\n"
     << "min_radius = " << s.min_radius << "\n"
     << "max_radius = " << s.max_radius << "\n"
     << "min_clusters = " << s.min_clusters << "\n"
     << "max_clusters = " << s.max_clusters << "\n"
     << "cluster_spread = " << s.cluster_spread << "\n"
     << "max_blob_overlap = " << s.max_blob_overlap << "\n"
     << "illumination = " << s.illumination << "\n"
     << "hue_shift = " << s.hue_shift << "\n"
     << "min_distractors = " << s.min_distractors << "\n"
     << "max_distractors = " << s.max_distractors << "\n"
     << "max_attempts = " << s.max_attempts << "\n\n";
  const auto& m = c.model;
  os << "[model]\n"
     << "cb = " << m.flags.cb << "\n"
     << "frm = " << m.flags.frm << "\n"
     << "dce = " << m.flags.dce << "\n"
     << "mama = " << m.flags.mama << "\n"
     << "stages = " << detail::format_stages(m.backbone.stages) << "\n"
     << "stem_channels = " << m.backbone.stem_channels << "\n"
     << "dce_reduction = " << m.dce_reduction << "\n\n";
  os << "[anchors]\n"
     << "stride = " << m.anchors.stride << "\n"
     << "base_size = " << m.anchors.base_size << "\n"
     << "ratios = " << detail::format_list(m.anchors.ratios) << "\n"
     << "scales = " << detail::format_list(m.anchors.scales) << "\n"
     << "pos_iou = " << m.anchors.pos_iou << "\n"
     << "neg_iou = " << m.anchors.neg_iou << "\n\n";
  const auto& t = c.train;
  os << "[train]\n"
     << "epochs = " << t.epochs << "\n"
     << "base_lr = " << t.base_lr << "\n"
     << "lr_decay_factor = " << t.lr_decay_factor << "\n"
     << "decay_every_epochs = " << t.decay_every_epochs << "\n"
     << "momentum = " << t.momentum << "\n"
     << "weight_decay = " << t.weight_decay << "\n"
     << "batch_size = " << t.batch_size << "\n"
     << "seed = " << t.seed << "\n"
     << "hflip = " << t.hflip << "\n\n";
  const auto& e = c.eval;
  os << "[nms]\n"
     << "method = " << (e.nms.method == SoftNmsMethod::gaussian ? "gaussian" : "linear") << "\n"
     << "iou_thr = " << e.nms.iou_thr << "\n"
     << "sigma = " << e.nms.sigma << "\n"
     << "score_thr = " << e.nms.score_thr << "\n"
     << "pre_nms_top_k = " << e.pre_nms_top_k << "\n"
     << "max_detections = " << e.max_detections << "\n\n";
  os << "[eval]\n"
     << "iou_thr = " << e.iou_thr << "\n";
  return os.str();
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string config_hash(const RunConfig& c) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a(to_ini(c));
  return os.str();
}

}  // namespace acnet
