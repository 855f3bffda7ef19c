#include <gtest/gtest.h>

#include <random>

#include "oracles.hpp"

using namespace acnet;
using D = double;

namespace {

Tensor<D> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<D> v(s.numel());
  for (auto& e : v) e = u(rng);
  return Tensor<D>(s, std::move(v));
}

void fill_random(Tensor<D> t, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.values()) v = u(rng);
}

// Independent BN state with the same parameters and statistics.
BatchNorm<D> clone(const BatchNorm<D>& bn) {
  BatchNorm<D> c(bn.channels());
  c.gamma.values() = bn.gamma.values();
  c.beta.values() = bn.beta.values();
  c.running_mean.values() = bn.running_mean.values();
  c.running_var.values() = bn.running_var.values();
  c.eps = bn.eps;
  c.momentum = bn.momentum;
  c.mode = bn.mode;
  return c;
}

BackboneConfig small_config() {
  BackboneConfig cfg;
  cfg.stages = {{4, 2}, {6, 2}, {8, 2}, {10, 2}};
  return cfg;
}

FeatureRefinement<D> random_frm(std::size_t ck, std::size_t cp, std::mt19937_64& rng) {
  Rng init(rng());
  FeatureRefinement<D> m(ck, cp, init);
  fill_random(m.refine.p.bias, rng);
  for (auto* bn : {&m.fuse_bn, &m.lead_bn}) {
    fill_random(bn->gamma, rng, 0.5, 1.5);
    fill_random(bn->beta, rng, -0.3, 0.3);
    fill_random(bn->running_mean, rng, -0.2, 0.2);
    fill_random(bn->running_var, rng, 0.5, 2.0);
  }
  return m;
}

}  // namespace

TEST(Backbone, StageSizesFollowStrides) {
  Rng rng(1);
  Backbone<float> b(BackboneConfig{}, rng);
  auto outs = b.forward(Tensor<float>(Shape{1, 3, 64, 64}, 0.5f));
  ASSERT_EQ(outs.size(), 4u);
  const std::size_t sizes[] = {32, 16, 8, 4};
  const std::size_t channels[] = {16, 32, 64, 128};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(outs[i].shape(), (Shape{1, channels[i], sizes[i], sizes[i]}));
}

TEST(Backbone, ZeroInputGivesZeroStages) {
  Rng rng(2);
  Backbone<D> b(small_config(), rng);
  for (auto& t : b.forward(Tensor<D>(Shape{2, 3, 32, 32})))
    for (double v : t.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backbone, SameSeedSameOutputs) {
  std::mt19937_64 g(3);
  auto x = random_tensor({1, 3, 32, 32}, g);
  Rng r1(7), r2(7);
  Backbone<D> a(small_config(), r1), b(small_config(), r2);
  auto oa = a.forward(x), ob = b.forward(x);
  for (std::size_t i = 0; i < oa.size(); ++i) EXPECT_TRUE(oracle::tensors_equal(oa[i], ob[i]));
}

TEST(Backbone, RejectsIndivisibleOrMiscoloredInput) {
  Rng rng(4);
  Backbone<D> b(small_config(), rng);
  EXPECT_THROW(b.forward(Tensor<D>(Shape{1, 3, 36, 32})), InvalidInput);
  EXPECT_THROW(b.forward(Tensor<D>(Shape{1, 1, 32, 32})), InvalidInput);
  BackboneConfig bad = small_config();
  bad.stages[1].stride = 3;
  EXPECT_THROW(Backbone<D>(bad, rng), InvalidInput);
  bad.stages = {{4, 2}, {4, 2}};
  EXPECT_THROW(Backbone<D>(bad, rng), InvalidInput);
}

// --- frm_fuse -------------------------------------------------------------

TEST(FrmFuse, ZeroInputsGiveZero) {
  std::mt19937_64 g(5);
  auto m = random_frm(6, 4, g);
  m.project.zero();
  for (auto* bn : {&m.fuse_bn}) {
    *bn = BatchNorm<D>(4);
    bn->eps = 0.0;
    bn->mode = BnMode::infer;
  }
  auto f = frm_fuse(random_tensor({1, 6, 4, 4}, g), Tensor<D>(Shape{1, 4, 8, 8}), m);
  for (double v : f.data()) EXPECT_EQ(v, 0.0);
}

TEST(FrmFuse, NegativeSumIsClamped) {
  std::mt19937_64 g(6);
  auto m = random_frm(6, 4, g);
  m.project.zero();
  m.fuse_bn = BatchNorm<D>(4);
  m.fuse_bn.eps = 0.0;
  m.fuse_bn.mode = BnMode::infer;
  auto a_prev = random_tensor({1, 4, 8, 8}, g);
  auto f = frm_fuse(random_tensor({1, 6, 4, 4}, g), a_prev, m);
  for (std::size_t i = 0; i < f.numel(); ++i) {
    if (a_prev.data()[i] < 0) EXPECT_EQ(f.data()[i], 0.0);
    else EXPECT_EQ(f.data()[i], a_prev.data()[i]);
  }
}

TEST(FrmFuse, MatchesPrimitiveRecomposition) {
  std::mt19937_64 g(7);
  for (BnMode mode : {BnMode::infer, BnMode::train}) {
    auto m = random_frm(6, 4, g);
    m.fuse_bn.mode = mode;
    auto a_k = random_tensor({2, 6, 4, 5}, g);
    auto a_prev = random_tensor({2, 4, 8, 10}, g);
    BatchNorm<D> bn = clone(m.fuse_bn);
    auto lifted = conv2d(resize_bilinear(a_k, 8, 10), m.project.p);
    auto expect = relu(batchnorm(add(a_prev, lifted), bn));
    EXPECT_TRUE(oracle::tensors_equal(frm_fuse(a_k, a_prev, m), expect));
  }
}

TEST(FrmFuse, RejectsNonConformingShapes) {
  std::mt19937_64 g(8);
  auto m = random_frm(6, 4, g);
  EXPECT_THROW(frm_fuse(random_tensor({1, 6, 4, 4}, g), random_tensor({1, 5, 8, 8}, g), m), InvalidInput);
  EXPECT_THROW(frm_fuse(random_tensor({1, 6, 4, 4}, g), random_tensor({2, 4, 8, 8}, g), m), InvalidInput);
}

// --- frm_inject -------------------------------------------------------------

TEST(FrmInject, ClosedGateLeavesBiasMap) {
  std::mt19937_64 g(9);
  auto m = random_frm(6, 4, g);
  auto gk = frm_inject(random_tensor({1, 4, 5, 5}, g), Tensor<D>(Shape{1, 4, 5, 5}), m);
  for (std::size_t c = 0; c < 4; ++c)
    for (std::size_t i = 0; i < 25; ++i) EXPECT_EQ(gk.at(0, c, i / 5, i % 5), m.refine.p.bias.data()[c]);
}

TEST(FrmInject, OpenGateIsRefineOfNormalizedLead) {
  std::mt19937_64 g(10);
  for (BnMode mode : {BnMode::infer, BnMode::train}) {
    auto m = random_frm(6, 4, g);
    m.lead_bn.mode = mode;
    auto l_prev = random_tensor({2, 4, 6, 6}, g);
    BatchNorm<D> bn = clone(m.lead_bn);
    auto expect = conv2d(relu(batchnorm(l_prev, bn)), m.refine.p);
    EXPECT_TRUE(oracle::tensors_equal(frm_inject(l_prev, Tensor<D>(l_prev.shape(), 1.0), m), expect));
  }
}

TEST(FrmInject, MatchesPrimitiveRecomposition) {
  std::mt19937_64 g(11);
  auto m = random_frm(6, 4, g);
  auto l_prev = random_tensor({1, 4, 6, 6}, g);
  auto f_k = random_tensor({1, 4, 6, 6}, g, 0.0, 2.0);
  BatchNorm<D> bn = clone(m.lead_bn);
  auto expect = conv2d(relu(mul(batchnorm(l_prev, bn), f_k)), m.refine.p);
  EXPECT_TRUE(oracle::tensors_equal(frm_inject(l_prev, f_k, m), expect));
  EXPECT_THROW(frm_inject(l_prev, random_tensor({1, 4, 6, 5}, g), m), InvalidInput);
}

// --- composite_forward ------------------------------------------------------

TEST(CompositeBackbone, FeatureLevelsAreTheLastThreeStages) {
  Rng rng(12);
  CompositeBackbone<float> cb(BackboneConfig{}, {true, true}, rng);
  auto fs = cb.forward(Tensor<float>(Shape{1, 3, 64, 64}, 0.25f));
  EXPECT_EQ(fs.l2.shape(), (Shape{1, 32, 16, 16}));  // stride 4
  EXPECT_EQ(fs.l3.shape(), (Shape{1, 64, 8, 8}));    // stride 8
  EXPECT_EQ(fs.l4.shape(), (Shape{1, 128, 4, 4}));   // stride 16
  EXPECT_EQ(BackboneConfig{}.stride_at(2), 8u);
}

TEST(CompositeBackbone, WithoutCompositeIsThePlainLeadStream) {
  std::mt19937_64 g(13);
  auto x = random_tensor({2, 3, 32, 32}, g);
  Rng r1(21), r2(21);
  CompositeBackbone<D> cb(small_config(), {false, false}, r1);
  Backbone<D> plain(small_config(), r2);
  auto fs = cb.forward(x);
  auto outs = plain.forward(x);
  EXPECT_TRUE(oracle::tensors_equal(fs.l2, outs[1]));
  EXPECT_TRUE(oracle::tensors_equal(fs.l3, outs[2]));
  EXPECT_TRUE(oracle::tensors_equal(fs.l4, outs[3]));
  TensorList<D> list;
  cb.collect("b", list);
  TensorList<D> plain_list;
  plain.collect("b.lead", plain_list);
  EXPECT_EQ(count_trainable(list), count_trainable(plain_list));
}

TEST(CompositeBackbone, RefinementRequiresComposite) {
  Rng rng(14);
  EXPECT_THROW(CompositeBackbone<D>(small_config(), {false, true}, rng), InvalidInput);
}

TEST(CompositeBackbone, TraceShapesSatisfyTheLevelContract) {
  std::mt19937_64 g(15);
  Rng rng(15);
  CompositeBackbone<D> cb(small_config(), {true, true}, rng);
  DualFeatures<D> tr;
  cb.forward(random_tensor({1, 3, 32, 32}, g), &tr);
  ASSERT_EQ(tr.assistant.size(), 4u);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(tr.assistant[k].shape(), tr.lead[k].shape());
  for (std::size_t k : cb.injection_stages()) {
    EXPECT_EQ(tr.fused[k].shape(), tr.assistant[k - 1].shape());
    EXPECT_EQ(tr.refined[k].shape(), tr.lead[k - 1].shape());
  }
  EXPECT_EQ(cb.injection_stages(), (std::vector<std::size_t>{2, 3}));
}

TEST(CompositeBackbone, OpenGatesReduceToAdditiveRefinement) {
  // Copy the lead weights into the assistant and force f_k = 1 (fuse BN with
  // gamma 0, beta 1). Each injection then adds refine(ReLU(BN(L_{k-1}))).
  std::mt19937_64 g(16);
  auto x = random_tensor({1, 3, 32, 32}, g);
  Rng rng(16);
  CompositeBackbone<D> cb(small_config(), {true, true}, rng);
  TensorList<D> lead, assist;
  cb.lead().collect("", lead);
  cb.assistant().collect("", assist);
  for (std::size_t i = 0; i < lead.size(); ++i) {
    Tensor<D> t = assist[i].tensor;
    t.values() = lead[i].tensor.values();
  }
  for (auto& r : cb.refiners()) {
    fill_random(r.refine.p.bias, g);
    std::fill(r.fuse_bn.gamma.values().begin(), r.fuse_bn.gamma.values().end(), 0.0);
    std::fill(r.fuse_bn.beta.values().begin(), r.fuse_bn.beta.values().end(), 1.0);
  }
  DualFeatures<D> tr;
  auto fs = cb.forward(x, &tr);
  for (std::size_t k : cb.injection_stages())
    for (double v : tr.fused[k].data()) EXPECT_EQ(v, 1.0);

  // Reference: the same lead stages run standalone with explicit injections.
  auto& lead_bb = cb.lead();
  Tensor<D> h = x;
  std::vector<Tensor<D>> outs;
  for (std::size_t s = 0; s < 4; ++s) {
    if (s >= 2) {
      auto& r = cb.refiners()[s - 2];
      BatchNorm<D> bn = clone(r.lead_bn);
      h = add(h, conv2d(relu(batchnorm(h, bn)), r.refine.p));
    }
    h = lead_bb.stage(s, h);
    outs.push_back(h);
  }
  EXPECT_TRUE(oracle::tensors_equal(fs.l2, outs[1]));
  EXPECT_TRUE(oracle::tensors_equal(fs.l3, outs[2]));
  EXPECT_TRUE(oracle::tensors_equal(fs.l4, outs[3]));
  // With shared weights the assistant stream equals the uninjected lead stream.
  auto plain_outs = cb.lead().forward(x);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_TRUE(oracle::tensors_equal(tr.assistant[k], plain_outs[k]));
}

TEST(CompositeBackbone, PlainConnectionAddsProjectedAssistant) {
  std::mt19937_64 g(17);
  auto x = random_tensor({1, 3, 32, 32}, g);
  Rng rng(17);
  CompositeBackbone<D> cb(small_config(), {true, false}, rng);
  TensorList<D> list;
  cb.collect("cb", list);
  ConvParams<D> connect[2];
  for (const auto& e : list) {
    for (int i = 0; i < 2; ++i) {
      if (e.name == "cb.connect" + std::to_string(i) + ".weight") connect[i].weight = e.tensor;
      if (e.name == "cb.connect" + std::to_string(i) + ".bias") connect[i].bias = e.tensor;
    }
  }
  ASSERT_TRUE(connect[0].weight.defined() && connect[1].weight.defined());
  DualFeatures<D> tr;
  auto fs = cb.forward(x, &tr);
  Tensor<D> h = x;
  std::vector<Tensor<D>> outs;
  for (std::size_t s = 0; s < 4; ++s) {
    if (s >= 2) {
      const Shape hs = h.shape();
      h = add(h, conv2d(resize_bilinear(tr.assistant[s], hs.h, hs.w), connect[s - 2]));
    }
    h = cb.lead().stage(s, h);
    outs.push_back(h);
  }
  EXPECT_TRUE(oracle::tensors_equal(fs.l3, outs[2]));
  EXPECT_TRUE(oracle::tensors_equal(fs.l4, outs[3]));
}
