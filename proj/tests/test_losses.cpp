#include <gtest/gtest.h>

#include "lpr/losses.hpp"
#include "support.hpp"

using namespace lpr;

namespace {

torch::Tensor d64(std::initializer_list<double> v) { return torch::tensor(std::vector<double>(v), torch::kFloat64); }

/// 1x1 convolution with weight 2 exposed as two layers.
class DoublingExtractor : public FeatureExtractor {
 public:
  std::vector<std::string> layer_names() const override { return {"a", "b"}; }
  std::map<std::string, torch::Tensor> extract(const torch::Tensor& images,
                                               const std::vector<std::string>& layers) override {
    std::map<std::string, torch::Tensor> out;
    for (const auto& l : layers) out[l] = images * 2.0;
    return out;
  }
};

torch::Tensor binary_mask(int64_t n, double p, int seed) {
  torch::manual_seed(seed);
  return (torch::rand({1, 1, n, n}, torch::kFloat64) < p).to(torch::kFloat64);
}

}  // namespace

TEST(Dice, ExactCases) {
  auto m = binary_mask(8, 0.5, 1);
  EXPECT_NEAR(dice_loss(m, m).item<double>(), 0.0, 1e-6);
  auto left = torch::zeros({1, 1, 8, 8}, torch::kFloat64);
  left.narrow(3, 0, 4).fill_(1.0);
  EXPECT_NEAR(dice_loss(left, 1.0 - left).item<double>(), 1.0, 1e-6);
  EXPECT_NEAR(dice_loss(torch::full({1, 1, 8, 8}, 0.5), torch::ones({1, 1, 8, 8})).item<double>(), 0.2, 1e-6);
}

TEST(Dice, EmptyMasksAndRange) {
  auto z = torch::zeros({1, 1, 4, 4});
  EXPECT_EQ(dice_loss(z, z).item<double>(), 0.0);
  torch::manual_seed(2);
  for (int i = 0; i < 20; ++i) {
    const double v = dice_loss(torch::rand({1, 1, 6, 6}), binary_mask(6, 0.3, i).to(torch::kFloat32)).item<double>();
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_THROW(dice_loss(z, torch::zeros({1, 1, 4, 5})), ShapeError);
}

TEST(Hinge, TabulatedCases) {
  EXPECT_EQ(hinge_d_loss(d64({2.0}), d64({-2.0})).item<double>(), 0.0);
  EXPECT_EQ(hinge_d_loss(d64({0.0}), d64({0.0})).item<double>(), 2.0);
  EXPECT_EQ(hinge_g_loss(d64({3.0})).item<double>(), -3.0);
}

TEST(EmbeddingMatch, ExactCases) {
  auto v = d64({1.0, -2.0, 0.5});
  EXPECT_EQ(embedding_match_loss(v, v).item<double>(), 0.0);
  EXPECT_EQ(embedding_match_loss(d64({1.0, 0.0}), d64({0.0, 3.0})).item<double>(), 1.0);
  EXPECT_EQ(embedding_match_loss(v, -v).item<double>(), 2.0);
  EXPECT_TRUE(std::isfinite(embedding_match_loss(d64({0.0, 0.0}), d64({1.0, 0.0})).item<double>()));
  EXPECT_THROW(embedding_match_loss(d64({1.0}), d64({1.0, 2.0})), ShapeError);
}

TEST(FeatureMatching, Cases) {
  auto a = torch::zeros({2, 3}, torch::kFloat64), b = torch::zeros({4}, torch::kFloat64);
  EXPECT_EQ(feature_matching_loss({a}, {a}).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(feature_matching_loss({a}, {a - 1.5}).item<double>(), 1.5);
  EXPECT_DOUBLE_EQ(feature_matching_loss({a, b}, {a + 1, b + 3}).item<double>(), 2.0);
  EXPECT_THROW(feature_matching_loss({a}, {a, b}), ShapeError);
}

TEST(Perceptual, StubExtractorAndSymmetry) {
  DoublingExtractor ex;
  torch::manual_seed(3);
  auto x = torch::rand({1, 3, 4, 4}, torch::kFloat64);
  EXPECT_NEAR(perceptual_loss(x, x + 0.25, ex, {"a"}).item<double>(), 0.5, 1e-12);
  EXPECT_EQ(perceptual_loss(x, x, ex, {"a", "b"}).item<double>(), 0.0);
  auto y = torch::rand({1, 3, 4, 4}, torch::kFloat64);
  EXPECT_EQ(perceptual_loss(x, y, ex, {"a", "b"}).item<double>(), perceptual_loss(y, x, ex, {"a", "b"}).item<double>());
  EXPECT_THROW(perceptual_loss(x, y, ex, {"c"}), ConfigError);
}

TEST(RandomExtractor, FixedSeedIsDeterministic) {
  RandomConvExtractor a(7, 4), b(7, 4);
  auto img = torch::rand({1, 3, 32, 32});
  auto fa = a.extract(img, {"relu4"}), fb = b.extract(img, {"relu4"});
  EXPECT_TRUE(torch::equal(fa.at("relu4"), fb.at("relu4")));
  EXPECT_THROW(a.extract(img, {"relu9"}), ConfigError);
}

TEST(Gradients, ElementaryTermsMatchFiniteDifferences) {
  torch::manual_seed(4);
  auto target = binary_mask(8, 0.5, 9);
  EXPECT_LT(test::gradient_error([&](const torch::Tensor& p) { return dice_loss(p, target); },
                                 torch::rand({1, 1, 8, 8}, torch::kFloat64) * 0.9 + 0.05),
            1e-4);
  // scores kept away from the hinge kinks
  auto real = torch::rand({8}, torch::kFloat64) * 1.6 - 0.3;
  auto fake = torch::rand({8}, torch::kFloat64) * 1.6 - 1.3;
  real = real + (real - 1.0).abs().lt(0.05).to(torch::kFloat64) * 0.1;
  fake = fake + (fake + 1.0).abs().lt(0.05).to(torch::kFloat64) * 0.1;
  EXPECT_LT(test::gradient_error([&](const torch::Tensor& r) { return hinge_d_loss(r, fake); }, real), 1e-4);
  EXPECT_LT(test::gradient_error([&](const torch::Tensor& f) { return hinge_d_loss(real, f); }, fake), 1e-4);
  EXPECT_LT(test::gradient_error([](const torch::Tensor& f) { return hinge_g_loss(f); }, fake), 1e-4);

  auto r1 = torch::randn({2, 4, 4}, torch::kFloat64), r2 = torch::randn({8}, torch::kFloat64);
  auto f2 = r2 + 0.5;
  EXPECT_LT(test::gradient_error([&](const torch::Tensor& f) { return feature_matching_loss({r1, r2}, {f, f2}); },
                                 r1 + torch::sign(torch::randn({2, 4, 4}, torch::kFloat64)) * 0.3),
            1e-4);
  auto v = torch::randn({8}, torch::kFloat64);
  EXPECT_LT(test::gradient_error([&](const torch::Tensor& a) { return embedding_match_loss(a, v); },
                                 torch::randn({8}, torch::kFloat64)),
            1e-4);
}

TEST(Gradients, AdainMlpMatchesFiniteDifferences) {
  torch::manual_seed(5);
  AdainMlp mlp(6, 4, 8, std::vector<int64_t>{3, 2});
  mlp->to(torch::kFloat64);
  mlp->eval();
  auto pose = torch::randn({1, 4}, torch::kFloat64);
  auto probe = torch::randn({1, mlp->output_width()}, torch::kFloat64);
  EXPECT_LT(test::gradient_error(
                [&](const torch::Tensor& id) { return (mlp->forward_flat(id, pose) * probe).sum(); },
                torch::randn({1, 6}, torch::kFloat64)),
            1e-4);
  auto id = torch::randn({1, 6}, torch::kFloat64);
  EXPECT_LT(test::gradient_error(
                [&](const torch::Tensor& y) { return (mlp->forward_flat(id, y) * probe).sum(); }, pose),
            1e-4);
}

namespace {

struct LossFixture {
  LossFixture() : cfg(test::tiny_config()), disc(32, 4, 2) {
    disc->to(torch::kFloat64);
    disc->eval();
    auto ex = std::make_shared<RandomConvExtractor>(cfg.losses.extractor_seed, 4);
    ex->to(torch::kFloat64);
    ctx = cfg.loss_context();
    ctx.generic_extractor = ex;
    torch::manual_seed(6);
    in.target_rgb = torch::rand({1, 3, 32, 32}, torch::kFloat64) * 2 - 1;
    in.target_mask = binary_mask(32, 0.6, 6);
    in.output.rgb = torch::rand({1, 3, 32, 32}, torch::kFloat64) * 2 - 1;
    in.output.mask = torch::rand({1, 1, 32, 32}, torch::kFloat64);
    in.projected_identity = torch::randn({1, disc->feature_dim()}, torch::kFloat64);
    in.video_embedding = torch::randn({1, disc->feature_dim()}, torch::kFloat64);
  }
  RunConfig cfg;
  Discriminator disc;
  LossContext ctx;
  GeneratorLossInputs in;
};

}  // namespace

TEST(LossesFromOutputs, PerfectGeneratorHasZeroReconstruction) {
  LossFixture f;
  f.in.output.rgb = f.in.target_rgb * f.in.target_mask;
  f.in.output.mask = f.in.target_mask;
  torch::NoGradGuard g;
  auto [gs, ds] = losses_from_outputs(f.in, f.disc, f.ctx);
  EXPECT_NEAR(gs.report.value("dice"), 0.0, 1e-6);
  EXPECT_EQ(gs.report.value("content_generic"), 0.0);
}

TEST(LossesFromOutputs, TotalIsLinearInWeights) {
  LossFixture f;
  torch::NoGradGuard g;
  auto [base, d0] = losses_from_outputs(f.in, f.disc, f.ctx);
  double sum = 0.0;
  for (size_t i = 0; i < base.report.values.size(); ++i) sum += base.report.weights[i] * base.report.values[i];
  EXPECT_NEAR(base.report.total, sum, 1e-6);
  EXPECT_NEAR(base.total.item<double>(), base.report.total, 1e-6);

  auto scaled = f.ctx;
  scaled.weights.dice *= 3;
  scaled.weights.content_generic *= 3;
  scaled.weights.adv *= 3;
  scaled.weights.fm *= 3;
  scaled.weights.emb *= 3;
  auto [tripled, d1] = losses_from_outputs(f.in, f.disc, scaled);
  EXPECT_NEAR(tripled.report.total, 3 * base.report.total, 1e-9);

  auto only_dice = f.ctx;
  only_dice.weights = LossWeights{2.5, 0, 0, 0, 0, 0};
  auto [dice_only, d2] = losses_from_outputs(f.in, f.disc, only_dice);
  EXPECT_NEAR(dice_only.report.total, 2.5 * base.report.value("dice"), 1e-12);
}

TEST(LossesFromOutputs, SegmentationOffDropsDiceAndComposite) {
  LossFixture f;
  f.ctx.use_segmentation = false;
  torch::NoGradGuard g;
  auto [gs, ds] = losses_from_outputs(f.in, f.disc, f.ctx);
  EXPECT_EQ(gs.report.weights[0], 0.0);
  auto m = torch::rand({1, 1, 4, 4});
  auto img = torch::rand({1, 3, 4, 4});
  EXPECT_TRUE(torch::equal(composite(img, m, false), img));
  EXPECT_TRUE(torch::allclose(composite(img, torch::zeros_like(m), true), -torch::ones_like(img)));
}

TEST(LossesFromOutputs, GeneratorPixelGradientMatchesFiniteDifferences) {
  LossFixture f;
  auto patch = f.in.output.rgb.narrow(2, 12, 8).narrow(3, 12, 8).select(1, 0).squeeze(0).clone();
  auto total = [&](const torch::Tensor& p) {
    auto in = f.in;
    auto pad = torch::constant_pad_nd(p.unsqueeze(0).unsqueeze(0), {12, 12, 12, 12});
    auto sel = torch::zeros({1, 3, 32, 32}, torch::kFloat64);
    sel.narrow(2, 12, 8).narrow(3, 12, 8).select(1, 0).fill_(1.0);
    auto channel0 = torch::zeros({1, 3, 1, 1}, torch::kFloat64);
    channel0[0][0] = 1.0;
    in.output.rgb = f.in.output.rgb * (1 - sel) + pad * channel0;
    return losses_from_outputs(in, f.disc, f.ctx).first.total;
  };
  EXPECT_LT(test::gradient_error(total, patch), 1e-4);
}

TEST(LossWeights, Validation) {
  EXPECT_THROW((LossWeights{0, 0, 0, 0, 0, 0}.validate()), ConfigError);
  EXPECT_THROW((LossWeights{-1, 1, 0, 0, 0, 0}.validate()), ConfigError);
  EXPECT_NO_THROW(LossWeights{}.validate());
}
