#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"

using namespace acnet;
namespace fs = std::filesystem;

namespace {

bool same_pixels(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

double mean_nn_distance(const std::vector<std::array<double, 2>>& pts) {
  double acc = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double best = 1e300;
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (i != j) best = std::min(best, std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]));
    acc += best;
  }
  return acc / static_cast<double>(pts.size());
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("acnet_synth_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(GenerateScene, IsDeterministicPerSeed) {
  SynthConfig cfg;
  cfg.seed = 99;
  const auto a = generate_scene(cfg);
  const auto b = generate_scene(cfg);
  EXPECT_TRUE(same_pixels(a.image, b.image));
  EXPECT_EQ(a.boxes, b.boxes);
  EXPECT_TRUE(same_pixels(a.mask, b.mask));
  cfg.seed = 100;
  EXPECT_FALSE(same_pixels(generate_scene(cfg).image, a.image));
}

TEST(GenerateScene, EmptyObjectRangeGivesNoBoxes) {
  SynthConfig cfg;
  cfg.min_objects = 0;
  cfg.max_objects = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    cfg.seed = seed;
    const auto s = generate_scene(cfg);
    EXPECT_TRUE(s.boxes.empty());
    for (float v : s.mask.data()) EXPECT_EQ(v, 0.0f);
  }
}

TEST(GenerateScene, BoxesAreInBoundsAndMaskMatchesRasterizer) {
  SynthConfig cfg;
  for (std::uint64_t seed = 1; seed <= 60; ++seed) {
    cfg.seed = seed;
    const auto s = generate_scene(cfg);
    EXPECT_GE(s.boxes.size(), cfg.min_objects);
    EXPECT_LE(s.boxes.size(), cfg.max_objects);
    EXPECT_EQ(s.image.shape(), (Shape{1, 3, 64, 64}));
    for (float v : s.image.data()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
    for (const Box& b : s.boxes) {
      EXPECT_GE(b.x1, 0.0);
      EXPECT_GE(b.y1, 0.0);
      EXPECT_LE(b.x2, 64.0);
      EXPECT_LE(b.y2, 64.0);
      EXPECT_GE(b.width(), 2.0);
      EXPECT_GE(b.height(), 2.0);
      EXPECT_EQ(b.x1, std::floor(b.x1));
      EXPECT_EQ(b.x2, std::floor(b.x2));
    }
    for (std::size_t i = 0; i < s.boxes.size(); ++i)
      for (std::size_t j = i + 1; j < s.boxes.size(); ++j) EXPECT_LE(iou(s.boxes[i], s.boxes[j]), cfg.max_blob_overlap);
    EXPECT_TRUE(same_pixels(s.mask, rasterize_mask_label<float>(s.boxes, 64, 64, 8)));
  }
}

TEST(GenerateScene, BlobsClusterMoreThanUniformPoints) {
  SynthConfig cfg;
  std::mt19937_64 g(41);
  std::uniform_real_distribution<double> u(0.0, 64.0);
  double scene = 0.0, uniform = 0.0;
  int used = 0;
  for (std::uint64_t seed = 1; used < 50; ++seed) {
    cfg.seed = seed;
    const auto s = generate_scene(cfg);
    if (s.boxes.size() < 2) continue;
    std::vector<std::array<double, 2>> pts, ref;
    for (const Box& b : s.boxes) pts.push_back({b.cx(), b.cy()});
    scene += mean_nn_distance(pts);
    double mc = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
      ref.clear();
      for (std::size_t k = 0; k < pts.size(); ++k) ref.push_back({u(g), u(g)});
      mc += mean_nn_distance(ref) / 20.0;
    }
    uniform += mc;
    ++used;
  }
  EXPECT_LT(scene, uniform);
}

TEST(GenerateScene, RejectsInvalidConfig) {
  SynthConfig cfg;
  cfg.image_size = 60;
  EXPECT_THROW(generate_scene(cfg), InvalidInput);
  cfg = SynthConfig{};
  cfg.min_objects = 5;
  cfg.max_objects = 4;
  EXPECT_THROW(generate_scene(cfg), InvalidInput);
}

TEST(SceneSeed, SplitsAndIndicesDiffer) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t split : {0u, 1u})
    for (std::uint64_t i = 0; i < 100; ++i) EXPECT_TRUE(seen.insert(scene_seed(7, split, i)).second);
  const auto a = generate_split(SynthConfig{}, 7, 0, 3);
  const auto b = generate_split(SynthConfig{}, 7, 0, 3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a[i].seed, scene_seed(7, 0, i));
    EXPECT_TRUE(same_pixels(a[i].image, b[i].image));
  }
}

// --- tiles ------------------------------------------------------------------------------

TEST(CropTiles, LargeTileLeavesImageUntouched) {
  SynthConfig cfg;
  cfg.seed = 3;
  const auto s = generate_scene(cfg);
  const auto tiles = crop_tiles(s, 640, 0);
  ASSERT_EQ(tiles.size(), 1u);
  EXPECT_TRUE(same_pixels(tiles[0].image, s.image));
  EXPECT_EQ(tiles[0].boxes, s.boxes);
  EXPECT_THROW(crop_tiles(s, 64, 64), InvalidInput);
}

TEST(CropTiles, NinetySixPixelsGiveFourCoveringTiles) {
  SynthConfig cfg;
  cfg.image_size = 96;
  cfg.seed = 4;
  const auto s = generate_scene(cfg);
  const auto tiles = crop_tiles(s, 64, 32);
  ASSERT_EQ(tiles.size(), 4u);
  const std::size_t origins[4][2] = {{0, 0}, {0, 32}, {32, 0}, {32, 32}};  // (y, x)
  std::vector<int> covered(96 * 96, 0);
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(tiles[t].image.shape(), (Shape{1, 3, 64, 64}));
    EXPECT_EQ(tiles[t].mask.shape(), (Shape{1, 1, 8, 8}));
    const auto [oy, ox] = std::pair{origins[t][0], origins[t][1]};
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x) {
          ASSERT_EQ(tiles[t].image.at(0, c, y, x), s.image.at(0, c, oy + y, ox + x));
          if (c == 0) covered[(oy + y) * 96 + ox + x] = 1;
        }
  }
  for (int v : covered) EXPECT_EQ(v, 1);
}

TEST(CropTiles, BoxesFollowTheRetentionRule) {
  SynthConfig cfg;
  cfg.image_size = 128;
  cfg.max_objects = 20;
  cfg.max_clusters = 4;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    cfg.seed = seed;
    const auto s = generate_scene(cfg);
    const auto tiles = crop_tiles(s, 64, 16);
    const std::vector<double> offs{0, 48, 64};
    ASSERT_EQ(tiles.size(), offs.size() * offs.size());
    for (std::size_t t = 0; t < tiles.size(); ++t) {
      const double oy = offs[t / offs.size()], ox = offs[t % offs.size()];
      std::vector<Box> expect;
      for (const Box& b : s.boxes) {
        const double x1 = std::max(b.x1, ox), y1 = std::max(b.y1, oy);
        const double x2 = std::min(b.x2, ox + 64), y2 = std::min(b.y2, oy + 64);
        if (x2 <= x1 || y2 <= y1) continue;
        if ((x2 - x1) * (y2 - y1) < 0.25 * b.area()) continue;
        expect.push_back({x1 - ox, y1 - oy, x2 - ox, y2 - oy});
      }
      EXPECT_EQ(tiles[t].boxes, expect);
      EXPECT_TRUE(same_pixels(tiles[t].mask, rasterize_mask_label<float>(expect, 64, 64, 8)));
    }
  }
}

// --- hflip ------------------------------------------------------------------------------

TEST(Hflip, IsAnExactInvolution) {
  SynthConfig cfg;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    cfg.seed = seed;
    const auto s = generate_scene(cfg);
    const auto back = hflip(hflip(s));
    EXPECT_TRUE(same_pixels(back.image, s.image));
    EXPECT_EQ(back.boxes, s.boxes);
    EXPECT_TRUE(same_pixels(back.mask, s.mask));
  }
}

TEST(Hflip, MirrorsGeometry) {
  SceneSample s;
  s.image = Tensor<float>(Shape{1, 3, 64, 64}, 0.5f);
  s.image.at(0, 1, 3, 5) = 1.0f;
  s.boxes = {{24, 10, 40, 20}, {0, 0, 8, 8}};
  s.mask = rasterize_mask_label<float>(s.boxes, 64, 64, 8);
  const auto f = hflip(s);
  EXPECT_EQ(f.boxes[0], (Box{24, 10, 40, 20}));
  EXPECT_EQ(f.boxes[1], (Box{56, 0, 64, 8}));
  EXPECT_EQ(f.image.at(0, 1, 3, 58), 1.0f);
  EXPECT_TRUE(same_pixels(f.mask, rasterize_mask_label<float>(f.boxes, 64, 64, 8)));
}

TEST(Hflip, MaskMirrorMatchesRerasterization) {
  SynthConfig cfg;
  for (std::uint64_t seed = 11; seed <= 40; ++seed) {
    cfg.seed = seed;
    const auto f = hflip(generate_scene(cfg));
    EXPECT_TRUE(same_pixels(f.mask, rasterize_mask_label<float>(f.boxes, 64, 64, 8)));
  }
}

// --- persistence ------------------------------------------------------------------------

TEST(Ppm, RoundTripWithinQuantization) {
  SynthConfig cfg;
  cfg.seed = 5;
  const auto s = generate_scene(cfg);
  const auto dir = scratch_dir("ppm");
  fs::create_directories(dir);
  write_ppm(dir / "a.ppm", s.image);
  const auto back = read_ppm(dir / "a.ppm");
  ASSERT_EQ(back.shape(), s.image.shape());
  for (std::size_t i = 0; i < back.numel(); ++i) EXPECT_NEAR(back.data()[i], s.image.data()[i], 0.5 / 255.0 + 1e-6);
  write_ppm(dir / "b.ppm", back);
  EXPECT_TRUE(same_pixels(read_ppm(dir / "b.ppm"), back));
  std::ofstream(dir / "bad.ppm") << "P3\n1 1\n255\n0 0 0\n";
  EXPECT_THROW(read_ppm(dir / "bad.ppm"), FormatError);
  EXPECT_THROW(read_ppm(dir / "missing.ppm"), FormatError);
  fs::remove_all(dir);
}

TEST(Split, RoundTripKeepsBoxesAndMasks) {
  const auto samples = generate_split(SynthConfig{}, 11, 0, 5);
  const auto dir = scratch_dir("split");
  write_split(dir, "train", samples);
  const auto back = read_split(dir, "train", 8);
  ASSERT_EQ(back.size(), samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    EXPECT_EQ(back[i].name, sample_name(i));
    EXPECT_EQ(back[i].sample.boxes, samples[i].boxes);
    EXPECT_TRUE(same_pixels(back[i].sample.mask, samples[i].mask));
  }
  EXPECT_EQ(sample_name(42), "000042.ppm");
  EXPECT_THROW(read_split(dir, "test", 8), FormatError);
  fs::remove_all(dir);
}
