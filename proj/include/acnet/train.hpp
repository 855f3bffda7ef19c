#pragma once

// SGD training, evaluation and ablation drivers.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acnet/checkpoint.hpp"
#include "acnet/config.hpp"
#include "acnet/dataset_io.hpp"
#include "acnet/model.hpp"
#include "acnet/postprocess.hpp"
#include "acnet/synth.hpp"

namespace acnet {

/// base_lr / decay^floor(epoch / decay_every).
inline double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  const double steps = static_cast<double>(epoch / cfg.decay_every_epochs);
  return cfg.base_lr / std::pow(cfg.lr_decay_factor, steps);
}

template <class T>
struct SgdState {
  std::vector<std::vector<T>> velocity;
};

/// v <- momentum·v + g + weight_decay·w;  w <- w - lr·v.
/// Gradients are read from each tensor's grad slot (zero if absent).
template <class T>
void sgd_step(const TensorList<T>& params, SgdState<T>& state, double lr, double momentum, double weight_decay) {
  detail::require(lr > 0.0, "sgd_step", "learning rate must be positive");
  if (state.velocity.empty()) {
    for (const auto& p : params) state.velocity.emplace_back(p.tensor.numel(), T(0));
  }
  detail::require(state.velocity.size() == params.size(), "sgd_step", "optimizer state does not match parameters");
  for (const auto& p : params) {
    if (!p.tensor.has_grad()) continue;
    for (T g : p.tensor.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericError("sgd_step: non-finite gradient in " + p.name);
    }
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T> t = params[i].tensor;
    auto& v = state.velocity[i];
    detail::require(v.size() == t.numel(), "sgd_step", "velocity shape mismatch for " + params[i].name);
    const bool has = t.has_grad();
    auto& w = t.values();
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double g = has ? static_cast<double>(t.grad()[k]) : 0.0;
      v[k] = static_cast<T>(momentum * v[k] + g + weight_decay * w[k]);
      w[k] = static_cast<T>(w[k] - lr * v[k]);
    }
  }
}

template <class T>
void zero_grads(const TensorList<T>& params) {
  for (const auto& p : params) {
    Tensor<T> t = p.tensor;
    t.zero_grad();
  }
}

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double cls = 0.0;
  double reg = 0.0;
  double att = 0.0;
};

struct RunMetrics {
  std::vector<EpochMetrics> epochs;
  double map = 0.0;
  std::string config_hash;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
  return {{"epoch", m.epoch}, {"lr", m.lr}, {"loss", m.loss}, {"cls", m.cls}, {"reg", m.reg}, {"att", m.att}};
}

/// Stacks single-image tensors (1,C,H,W) along the batch axis.
inline Tensor<float> stack_batch(const std::vector<const Tensor<float>*>& parts) {
  const Shape s = parts.front()->shape();
  Tensor<float> out(Shape{parts.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (parts[i]->shape() != s) throw InvalidInput("stack_batch: inconsistent sample shapes");
    std::copy(parts[i]->data().begin(), parts[i]->data().end(), out.data().begin() + i * s.numel());
  }
  return out;
}

/// Mask label at the head's feature stride.
inline Tensor<float> mask_for(const SceneSample& s, std::size_t stride) {
  if (s.mask.defined() && s.mask_stride == stride) return s.mask;
  return rasterize_mask_label<float>(s.boxes, s.height(), s.width(), stride);
}

struct EvalResult {
  double map = 0.0;
  std::vector<ImageEval> images;
  DetectionTable detections;
};

/// Scored boxes for each image of a batch: decode, keep the top-k by score,
/// soft-NMS, then cap the count.
inline std::vector<std::vector<Detection>> postprocess(const HeadOutput<float>& out, const std::vector<Box>& anchors,
                                                       double image_w, double image_h, const EvalConfig& cfg) {
  std::vector<std::vector<Detection>> result;
  for (std::size_t n = 0; n < out.objectness.shape().n; ++n) {
    auto dets = decode_head(out, anchors, n, image_w, image_h);
    std::erase_if(dets, [](const Detection& d) { return !d.box.valid(); });
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    if (cfg.pre_nms_top_k > 0 && dets.size() > cfg.pre_nms_top_k) dets.resize(cfg.pre_nms_top_k);
    auto kept = soft_nms(dets, cfg.nms);
    if (cfg.max_detections > 0 && kept.size() > cfg.max_detections) kept.resize(cfg.max_detections);
    result.push_back(std::move(kept));
  }
  return result;
}

/// Inference-mode forward over `samples`, suppression, and pooled AP.
/// `ids` names each image in the detection table (defaults to sample_name(i)).
inline EvalResult evaluate(Detector<float>& model, const std::vector<SceneSample>& samples, const EvalConfig& cfg,
                           const std::vector<std::string>& ids = {}, std::size_t batch = 8) {
  detail::require(ids.empty() || ids.size() == samples.size(), "evaluate", "one id per sample is required");
  model.set_mode(BnMode::infer);
  EvalResult r;
  if (samples.empty()) {
    r.map = average_precision(r.images, cfg.iou_thr);
    return r;
  }
  const std::size_t h = samples.front().height();
  const std::size_t w = samples.front().width();
  const auto anchors = generate_anchors(h, w, model.config().anchors);
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    std::vector<const Tensor<float>*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&samples[i].image);
    auto out = model.forward(stack_batch(imgs));
    auto dets = postprocess(out.head, anchors, static_cast<double>(w), static_cast<double>(h), cfg);
    for (std::size_t i = start; i < end; ++i) {
      const std::string id = ids.empty() ? sample_name(i) : ids[i];
      r.detections[id] = dets[i - start];
      r.images.push_back({std::move(dets[i - start]), samples[i].boxes});
    }
  }
  r.map = mean_average_precision(r.images, cfg.iou_thr);
  return r;
}

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  std::ostream* log = nullptr;    // progress lines, one per epoch
};

/// Trains `model` on `train_set` and evaluates on `test_set` (when non-empty).
/// With an output directory, writes config.ini, metrics.jsonl (one record per
/// epoch plus a final record) and checkpoint.acnk after every epoch.
inline RunMetrics train(const RunConfig& cfg, Detector<float>& model, const std::vector<SceneSample>& train_set,
                        const std::vector<SceneSample>& test_set, const TrainOptions& opt = {}) {
  cfg.validate();
  detail::require(!train_set.empty(), "train", "training set is empty");
  const auto& tc = cfg.train;
  const std::size_t stride = model.config().feature_stride();
  const std::size_t h = train_set.front().height();
  const std::size_t w = train_set.front().width();
  const auto anchors = generate_anchors(h, w, model.config().anchors);

  // Flipped views and anchor assignments are fixed per sample, so build them once.
  std::vector<SceneSample> flipped;
  std::vector<AnchorSet> sets, flipped_sets;
  std::vector<Tensor<float>> masks, flipped_masks;
  for (const auto& s : train_set) {
    if (s.height() != h || s.width() != w) throw InvalidInput("train: all images must share one size");
    sets.push_back(assign_anchors(anchors, s.boxes, model.config().anchors.pos_iou, model.config().anchors.neg_iou));
    masks.push_back(mask_for(s, stride));
    if (tc.hflip) {
      flipped.push_back(hflip(s));
      flipped_sets.push_back(
          assign_anchors(anchors, flipped.back().boxes, model.config().anchors.pos_iou, model.config().anchors.neg_iou));
      flipped_masks.push_back(mask_for(flipped.back(), stride));
    }
  }

  RunMetrics metrics;
  metrics.config_hash = config_hash(cfg);
  std::ofstream metrics_file;
  std::filesystem::path ckpt;
  if (!opt.out_dir.empty()) {
    std::filesystem::create_directories(opt.out_dir);
    std::ofstream(opt.out_dir / "config.ini") << to_ini(cfg);
    metrics_file.open(opt.out_dir / "metrics.jsonl", std::ios::trunc);
    if (!metrics_file) throw FormatError("train: cannot open metrics file in " + opt.out_dir.string());
    ckpt = opt.out_dir / "checkpoint.acnk";
  }

  Rng rng(tc.seed ^ 0xA5A5A5A5DEADBEEFULL);
  std::bernoulli_distribution coin(0.5);
  const TensorList<float> params = model.trainable();
  SgdState<float> opt_state;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
    model.set_mode(BnMode::train);
    const double lr = lr_at(epoch, tc);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = lr;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += tc.batch_size) {
      const std::size_t end = std::min(order.size(), start + tc.batch_size);
      std::vector<const Tensor<float>*> imgs, labels;
      std::vector<AnchorSet> batch_sets;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t idx = order[i];
        const bool flip = tc.hflip && coin(rng);
        imgs.push_back(flip ? &flipped[idx].image : &train_set[idx].image);
        labels.push_back(flip ? &flipped_masks[idx] : &masks[idx]);
        batch_sets.push_back(flip ? flipped_sets[idx] : sets[idx]);
      }
      auto out = model.forward(stack_batch(imgs));
      Tensor<float> mask;
      if (out.saliency.defined()) mask = stack_batch(labels);
      auto loss = total_loss(out.head, std::span<const AnchorSet>(batch_sets), &out.saliency, &mask);
      const double value = loss.total.item();
      if (!std::isfinite(value)) {
        throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                           std::to_string(start / tc.batch_size) +
                           (ckpt.empty() ? std::string() : "; last good checkpoint kept at " + ckpt.string()));
      }
      zero_grads(params);
      loss.total.backward();
      sgd_step(params, opt_state, lr, tc.momentum, tc.weight_decay);

      const double b = static_cast<double>(end - start);
      em.loss += b * value;
      em.cls += b * loss.cls.item();
      em.reg += b * loss.reg.item();
      if (loss.att.defined()) em.att += b * loss.att.item();
      seen += end - start;
    }
    const double norm = static_cast<double>(seen);
    em.loss /= norm;
    em.cls /= norm;
    em.reg /= norm;
    em.att /= norm;
    metrics.epochs.push_back(em);
    if (metrics_file.is_open()) {
      metrics_file << to_json(em).dump() << "\n" << std::flush;
      save_checkpoint(ckpt, model.tensors());
    }
    if (opt.log) {
      *opt.log << "epoch " << epoch + 1 << "/" << tc.epochs << " lr " << lr << " loss " << em.loss << " (cls "
               << em.cls << " reg " << em.reg << " att " << em.att << ")\n";
    }
  }

  if (!test_set.empty()) metrics.map = evaluate(model, test_set, cfg.eval).map;
  if (metrics_file.is_open()) {
    nlohmann::json final_record{{"final", true}, {"map", metrics.map}, {"config_hash", metrics.config_hash},
                                {"flags", model.config().flags.str()}};
    metrics_file << final_record.dump() << "\n" << std::flush;
  }
  return metrics;
}

/// Train and test splits for `cfg.data`, generated in memory.
struct SplitPair {
  std::vector<SceneSample> train;
  std::vector<SceneSample> test;
};

inline constexpr std::uint64_t kTrainSplit = 0;
inline constexpr std::uint64_t kTestSplit = 1;

inline SplitPair generate_dataset(const DataConfig& data) {
  return {generate_split(data.scene, data.seed, kTrainSplit, data.train_images),
          generate_split(data.scene, data.seed, kTestSplit, data.test_images)};
}

struct AblationResult {
  std::string row;
  AblationFlags flags;
  std::vector<double> maps;  // one per seed

  double mean() const {
    return maps.empty() ? 0.0 : std::accumulate(maps.begin(), maps.end(), 0.0) / static_cast<double>(maps.size());
  }
};

/// Trains each requested row once per seed on a shared dataset.
inline std::vector<AblationResult> ablate(const RunConfig& base, const std::vector<std::string>& rows,
                                          const std::vector<std::uint64_t>& seeds, const SplitPair& data,
                                          std::ostream* log = nullptr) {
  std::vector<AblationResult> results;
  for (const auto& row : rows) {
    AblationResult r{row, AblationFlags::row(row), {}};
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      cfg.model.flags = r.flags;
      cfg.train.seed = seed;
      Detector<float> model(cfg.model, seed);
      r.maps.push_back(train(cfg, model, data.train, data.test).map);
      if (log) *log << "row " << row << " (" << r.flags.str() << ") seed " << seed << " mAP " << r.maps.back() << "\n";
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace acnet
