#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

#include "oracles.hpp"

using namespace acnet;

namespace {

std::vector<Detection> random_detections(std::mt19937_64& g, std::size_t n, int extent, double lo = 0.01) {
  std::vector<Detection> out;
  std::uniform_real_distribution<double> s(lo, 1.0);
  for (std::size_t i = 0; i < n; ++i) out.push_back({oracle::random_box(g, extent, 1, extent / 2), s(g)});
  return out;
}

}  // namespace

// --- iou ----------------------------------------------------------------------------

TEST(Iou, WorkedExampleAndDegenerateCases) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {1, 1, 3, 3}), 1.0 / 7.0);
  EXPECT_EQ(iou({0, 0, 5, 5}, {0, 0, 5, 5}), 1.0);
  EXPECT_EQ(iou({0, 0, 5, 5}, {5, 0, 9, 5}), 0.0);
  EXPECT_EQ(iou({0, 0, 5, 5}, {7, 7, 9, 9}), 0.0);
}

TEST(Iou, MatchesPixelCountOnIntegerGrid) {
  std::mt19937_64 g(31);
  for (int trial = 0; trial < 300; ++trial) {
    const Box a = oracle::random_box(g, 12, 1, 8);
    const Box b = oracle::random_box(g, 12, 1, 8);
    int inter = 0, uni = 0;
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        const bool in_a = a.x1 <= x && x + 1 <= a.x2 && a.y1 <= y && y + 1 <= a.y2;
        const bool in_b = b.x1 <= x && x + 1 <= b.x2 && b.y1 <= y && y + 1 <= b.y2;
        inter += in_a && in_b;
        uni += in_a || in_b;
      }
    EXPECT_NEAR(iou(a, b), static_cast<double>(inter) / uni, 1e-12);
    EXPECT_EQ(iou(a, b), iou(b, a));
  }
}

// --- soft-NMS ------------------------------------------------------------------------

TEST(SoftNms, SingleDetectionPassesThrough) {
  auto out = soft_nms({{{1, 2, 3, 4}, 0.7}});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].score, 0.7);
  EXPECT_EQ(out[0].box, (Box{1, 2, 3, 4}));
  EXPECT_TRUE(soft_nms({}).empty());
}

TEST(SoftNms, TwoIdenticalBoxesGaussian) {
  auto out = soft_nms({{{0, 0, 10, 10}, 0.9}, {{0, 0, 10, 10}, 0.8}});
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].score, 0.9);
  EXPECT_NEAR(out[1].score, 0.8 * std::exp(-2.0), 1e-9);
}

TEST(SoftNms, LinearLeavesLowOverlapUntouched) {
  SoftNmsConfig cfg;
  cfg.method = SoftNmsMethod::linear;
  cfg.iou_thr = 0.3;
  // IoU 1/7 < 0.3, then an identical pair with IoU 1.
  auto out = soft_nms({{{0, 0, 2, 2}, 0.9}, {{1, 1, 3, 3}, 0.6}, {{0, 0, 2, 2}, 0.5}}, cfg);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].score, 0.9);
  EXPECT_EQ(out[1].score, 0.6);
}

TEST(SoftNms, NeverRaisesScoresAndKeepsTheTopDetection) {
  std::mt19937_64 g(32);
  for (const auto method : {SoftNmsMethod::linear, SoftNmsMethod::gaussian}) {
    SoftNmsConfig cfg;
    cfg.method = method;
    for (int trial = 0; trial < 100; ++trial) {
      const auto dets = random_detections(g, 1 + trial % 15, 32);
      const auto picks = soft_nms_select(dets, cfg);
      ASSERT_FALSE(picks.empty());
      std::size_t top = 0;
      for (std::size_t i = 1; i < dets.size(); ++i)
        if (dets[i].score > dets[top].score) top = i;
      EXPECT_EQ(picks[0].index, top);
      EXPECT_EQ(picks[0].score, dets[top].score);
      std::set<std::size_t> seen;
      for (std::size_t k = 0; k < picks.size(); ++k) {
        EXPECT_LE(picks[k].score, dets[picks[k].index].score);
        EXPECT_GE(picks[k].score, cfg.score_thr);
        EXPECT_TRUE(seen.insert(picks[k].index).second);
        if (k > 0) {
          EXPECT_LE(picks[k].score, picks[k - 1].score);
        }
      }
    }
  }
}

TEST(SoftNms, NarrowGaussianReproducesHardNms) {
  std::mt19937_64 g(33);
  SoftNmsConfig cfg;
  cfg.sigma = 1e-4;
  int instances = 0, with_overlap = 0;
  while (instances < 100) {
    const auto dets = random_detections(g, 2 + instances % 12, 24);
    bool usable = true;
    bool overlap = false;
    for (std::size_t i = 0; i < dets.size(); ++i)
      for (std::size_t j = i + 1; j < dets.size(); ++j) {
        const double o = oracle::iou(dets[i].box, dets[j].box);
        if (o > 0.0 && o < 0.05) usable = false;
        overlap = overlap || o > 0.0;
      }
    if (!usable) continue;
    ++instances;
    with_overlap += overlap;
    std::vector<std::size_t> got;
    for (const auto& p : soft_nms_select(dets, cfg)) got.push_back(p.index);
    EXPECT_EQ(got, oracle::hard_nms(dets, 0.0)) << "instance " << instances;
  }
  EXPECT_GT(with_overlap, 50);
}

// --- average precision ----------------------------------------------------------------

TEST(AveragePrecision, PerfectAndEmpty) {
  std::vector<Box> gts{{0, 0, 4, 4}, {10, 10, 14, 14}};
  EXPECT_EQ(average_precision({{gts[0], 0.9}, {gts[1], 0.8}}, gts), 1.0);
  EXPECT_EQ(average_precision({}, gts), 0.0);
  EXPECT_EQ(average_precision({}, {}), 1.0);
  EXPECT_EQ(average_precision({{gts[0], 0.9}}, {}), 0.0);
}

TEST(AveragePrecision, MixedWorkedExample) {
  // TP at 0.9, FP at 0.8, TP at 0.7: PR points (.5, 1), (.5, .5), (1, 2/3).
  std::vector<Box> gts{{0, 0, 4, 4}, {10, 10, 14, 14}};
  std::vector<Detection> dets{{gts[0], 0.9}, {{20, 20, 24, 24}, 0.8}, {gts[1], 0.7}};
  EXPECT_NEAR(average_precision(dets, gts), 0.5 * 1.0 + 0.5 * (2.0 / 3.0), 1e-12);
  // A duplicate of a matched box is a false positive.
  std::vector<Detection> dup{{gts[0], 0.9}, {gts[0], 0.8}};
  EXPECT_NEAR(average_precision(dup, gts), 0.5, 1e-12);
}

TEST(AveragePrecision, MatchesThresholdEnumerationOracle) {
  std::mt19937_64 g(34);
  std::uniform_int_distribution<int> n_img(1, 3), n_det(0, 10), n_gt(0, 4), coarse(1, 5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ImageEval> images;
    std::vector<oracle::ImageCase> cases;
    for (int im = n_img(g); im > 0; --im) {
      ImageEval e;
      for (int k = n_gt(g); k > 0; --k) e.ground_truth.push_back(oracle::random_box(g, 16, 2, 8));
      const int nd = std::min(n_det(g), 10);
      for (int k = 0; k < nd; ++k) {
        // Quantized scores produce ties; boxes are either jittered GT copies or random.
        const double score = coarse(g) / 5.0;
        Box b = oracle::random_box(g, 16, 2, 8);
        if (!e.ground_truth.empty() && std::bernoulli_distribution(0.6)(g)) {
          b = e.ground_truth[std::uniform_int_distribution<std::size_t>(0, e.ground_truth.size() - 1)(g)];
          b.x2 += std::uniform_int_distribution<int>(0, 2)(g);
        }
        e.detections.push_back({b, score});
      }
      cases.push_back({e.detections, e.ground_truth});
      images.push_back(std::move(e));
    }
    EXPECT_NEAR(average_precision(images, 0.5), oracle::oracle_map(cases, 0.5), 1e-9) << "trial " << trial;
    EXPECT_EQ(mean_average_precision(images, 0.5), average_precision(images, 0.5));
  }
}

TEST(AveragePrecision, TiedDetectionOrderDoesNotMatter) {
  std::mt19937_64 g(35);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Box> gts;
    for (int k = 0; k < 3; ++k) gts.push_back(oracle::random_box(g, 16, 2, 8));
    std::vector<Detection> dets;
    for (int k = 0; k < 8; ++k) dets.push_back({k % 2 ? gts[k % 3] : oracle::random_box(g, 16, 2, 8), 0.5});
    const double ref = average_precision(dets, gts);
    for (int p = 0; p < 10; ++p) {
      std::shuffle(dets.begin(), dets.end(), g);
      EXPECT_DOUBLE_EQ(average_precision(dets, gts), ref);
    }
  }
}

TEST(AveragePrecision, InvariantUnderImageOrder) {
  std::mt19937_64 g(36);
  std::vector<ImageEval> images(4);
  for (auto& e : images) {
    for (int k = 0; k < 3; ++k) e.ground_truth.push_back(oracle::random_box(g, 16, 2, 8));
    e.detections = random_detections(g, 6, 16);
    for (std::size_t k = 0; k < 2; ++k) e.detections.push_back({e.ground_truth[k], 0.3 + 0.1 * k});
  }
  const double ref = average_precision(images);
  std::reverse(images.begin(), images.end());
  EXPECT_DOUBLE_EQ(average_precision(images), ref);
}

// --- interchange formats ------------------------------------------------------------------

TEST(DetectionFile, RoundTripIsExact) {
  std::mt19937_64 g(37);
  DetectionTable table;
  for (const char* id : {"000000.ppm", "000001.ppm"}) {
    for (auto d : random_detections(g, 5, 64)) {
      d.box.x1 += 1.0 / 3.0;
      d.score = std::uniform_real_distribution<double>(0, 1)(g);
      table[id].push_back(d);
    }
  }
  std::stringstream ss;
  write_detections(ss, table);
  const auto back = read_detections(ss);
  ASSERT_EQ(back.size(), table.size());
  for (const auto& [id, dets] : table) {
    ASSERT_EQ(back.at(id).size(), dets.size());
    for (std::size_t i = 0; i < dets.size(); ++i) {
      EXPECT_EQ(back.at(id)[i].box, dets[i].box);
      EXPECT_EQ(back.at(id)[i].score, dets[i].score);
    }
  }
  std::stringstream bad("000000.ppm 1 2 3\n");
  EXPECT_THROW(read_detections(bad), FormatError);
}

TEST(GroundTruthFile, RoundTripIsExact) {
  GroundTruthTable t{{"a", {{0, 0, 3, 4}, {1.5, 2.25, 9, 9}}}, {"b", {}}};
  std::stringstream ss;
  write_ground_truth(ss, t);
  auto back = read_ground_truth(ss);
  EXPECT_EQ(back.at("a"), t.at("a"));
  EXPECT_EQ(back.count("b"), 0u);
}
