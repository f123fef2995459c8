#include <gtest/gtest.h>

#include <cmath>

#include "lpr/layers.hpp"
#include "lpr/networks.hpp"
#include "support.hpp"

using namespace lpr;

TEST(Adain, HandComputedTwoByTwo) {
  auto f = torch::tensor({1.0, 2.0, 3.0, 4.0}, torch::kFloat64).reshape({1, 2, 2});
  auto out = adain(f, torch::tensor({5.0}, torch::kFloat64), torch::tensor({2.0}, torch::kFloat64));
  const double sigma = std::sqrt(1.25 + 1e-5);  // biased std of {1,2,3,4}, eps-stabilised
  const double vals[] = {1, 2, 3, 4};
  for (int i = 0; i < 4; ++i) {
    EXPECT_NEAR(out.reshape({-1})[i].item<double>(), 5.0 + 2.0 * (vals[i] - 2.5) / sigma, 1e-12);
  }
}

TEST(Adain, UnitParamsGiveInstanceNorm) {
  torch::manual_seed(0);
  auto f = torch::randn({2, 3, 5, 5}, torch::kFloat64);
  auto out = adain(f, torch::zeros({2, 3}, torch::kFloat64), torch::ones({2, 3}, torch::kFloat64));
  auto ref = torch::instance_norm(f, {}, {}, {}, {}, true, 0.0, 1e-5, false);
  EXPECT_TRUE(torch::allclose(out, ref, 1e-10, 1e-10));
}

TEST(Adain, OutputStatisticsMatchRequest) {
  torch::manual_seed(1);
  for (int i = 0; i < 20; ++i) {
    auto f = torch::randn({4, 6, 6}, torch::kFloat64) * 3 + 1;
    auto m = torch::randn({4}, torch::kFloat64);
    auto s = torch::randn({4}, torch::kFloat64);
    auto out = adain(f, m, s);
    EXPECT_TRUE(torch::allclose(out.mean({1, 2}), m, 0, 1e-4));
    EXPECT_TRUE(torch::allclose(out.std({1, 2}, false), s.abs(), 0, 1e-4));
  }
}

TEST(Adain, SinglePixelStaysFinite) {
  auto out = adain(torch::ones({3, 1, 1}), torch::zeros({3}), torch::ones({3}));
  EXPECT_TRUE(torch::isfinite(out).all().item<bool>());
}

TEST(Adain, ChannelMismatchRejected) {
  EXPECT_ANY_THROW(adain(torch::ones({3, 4, 4}), torch::zeros({2}), torch::ones({2})));
}

TEST(Encoders, IdentityMeanOfStubOutputs) {
  auto frames = torch::zeros({2, 1});
  frames[1][0] = 1.0;
  auto stub = [](const torch::Tensor& x) {
    auto out = torch::zeros({x.size(0), 2});
    for (int64_t i = 0; i < x.size(0); ++i) {
      out[i][0] = x[i][0].item<double>() * 2;
      out[i][1] = 2 - x[i][0].item<double>() * 2;
    }
    return out;
  };
  auto mean = encode_identity(frames, stub);
  EXPECT_TRUE(torch::equal(mean, torch::tensor({1.0f, 1.0f})));
  EXPECT_THROW(encode_identity(torch::zeros({0, 1}), stub), std::invalid_argument);
}

TEST(Encoders, IdentityIsPermutationInvariantAndExactForCopies) {
  auto cfg = test::tiny_config().networks;
  Networks nets(cfg);
  nets.train(false);
  torch::NoGradGuard g;
  torch::manual_seed(2);
  auto frames = torch::rand({4, 3, 32, 32}) * 2 - 1;
  auto a = nets.encode_identity(frames);
  auto b = nets.encode_identity(frames.index_select(0, torch::tensor({2, 0, 3, 1})));
  EXPECT_TRUE(torch::allclose(a, b, 1e-5, 1e-6));
  auto same = frames[0].unsqueeze(0).expand({3, 3, 32, 32}).contiguous();
  auto single = nets.encode_identity(frames[0].unsqueeze(0));
  EXPECT_TRUE(torch::allclose(nets.encode_identity(same), single, 1e-6, 1e-6));
}

TEST(Encoders, PoseBatchingAndDims) {
  for (int dp : {64, 256}) {
    auto cfg = test::tiny_config().networks;
    cfg.pose_dim = dp;
    cfg.identity_dim = 512;
    Networks nets(cfg);
    nets.train(false);
    torch::NoGradGuard g;
    auto frames = torch::rand({3, 3, 32, 32}) * 2 - 1;
    auto batch = nets.encode_pose(frames);
    EXPECT_EQ(batch.sizes(), (std::vector<int64_t>{3, dp}));
    for (int i = 0; i < 3; ++i) EXPECT_TRUE(torch::allclose(batch[i], nets.encode_pose(frames[i]), 1e-5, 1e-5));
    EXPECT_TRUE(torch::equal(nets.encode_pose(frames[0]), nets.encode_pose(frames[0])));
    EXPECT_THROW(nets.encode_pose(torch::rand({3, 16, 16})), ShapeError);
  }
}

TEST(Mlp, OutputLayoutAndZeroWeights) {
  AdainMlp mlp(4, 3, 8, std::vector<int64_t>{2, 5});
  EXPECT_EQ(mlp->output_width(), 2 * 2 + 2 * 5);
  auto p = mlp->forward(torch::randn({2, 4}), torch::randn({2, 3}));
  ASSERT_EQ(p.sites.size(), 2u);
  EXPECT_EQ(p.sites[1].first.sizes(), (std::vector<int64_t>{2, 5}));
  {
    torch::NoGradGuard g;
    for (auto& t : mlp->parameters()) t.zero_();
  }
  // Zero weights: spectral normalisation of a zero matrix must stay finite.
  auto z = mlp->forward_flat(torch::randn({1, 4}), torch::randn({1, 3}));
  EXPECT_TRUE(torch::equal(z, torch::zeros_like(z)));
}

TEST(Mlp, SplitLayoutIsMeansThenStdsPerSite) {
  auto flat = torch::arange(10, torch::kFloat32).unsqueeze(0);
  auto p = split_adain_params(flat, {2, 3});
  EXPECT_TRUE(torch::equal(p.sites[0].first, torch::tensor({{0.f, 1.f}})));
  EXPECT_TRUE(torch::equal(p.sites[0].second, torch::tensor({{2.f, 3.f}})));
  EXPECT_TRUE(torch::equal(p.sites[1].first, torch::tensor({{4.f, 5.f, 6.f}})));
  EXPECT_TRUE(torch::equal(p.sites[1].second, torch::tensor({{7.f, 8.f, 9.f}})));
}

TEST(Generator, ShapesAndRanges) {
  for (int r : {64, 256}) {
    auto cfg = test::tiny_config().networks;
    cfg.resolution = r;
    cfg.base_channels = 16;
    Networks nets(cfg);
    torch::NoGradGuard g;
    auto out = nets.generate(torch::randn({cfg.identity_dim}) * 3, torch::randn({cfg.pose_dim}) * 3);
    EXPECT_EQ(out.rgb.sizes(), (std::vector<int64_t>{3, r, r}));
    EXPECT_EQ(out.mask.sizes(), (std::vector<int64_t>{1, r, r}));
    EXPECT_GE(out.rgb.min().item<float>(), -1.0f);
    EXPECT_LE(out.rgb.max().item<float>(), 1.0f);
    EXPECT_GE(out.mask.min().item<float>(), 0.0f);
    EXPECT_LE(out.mask.max().item<float>(), 1.0f);
  }
}

TEST(Generator, ChannelsHalveOverTheLastBlocks) {
  Generator g(256, 512);
  EXPECT_EQ(g->block_channels().back(), 64);
  Generator small(64, 64);
  EXPECT_EQ(small->block_channels().back(), 8);
}

TEST(Generator, DeterministicAndSensitiveToPose) {
  auto cfg = test::tiny_config().networks;
  Networks nets(cfg);
  nets.train(false);
  torch::NoGradGuard g;
  auto x = torch::randn({cfg.identity_dim});
  auto y1 = torch::randn({cfg.pose_dim}), y2 = torch::randn({cfg.pose_dim});
  auto a = nets.generate(x, y1).rgb, b = nets.generate(x, y1).rgb, c = nets.generate(x, y2).rgb;
  EXPECT_TRUE(torch::equal(a, b));
  EXPECT_GT((a - c).abs().sum().item<double>(), 0.0);
}

TEST(Discriminator, ProjectionTermStructure) {
  Discriminator d(32, 4, 3);
  d->eval();
  torch::NoGradGuard g;
  auto img = torch::rand({2, 3, 32, 32}) * 2 - 1;
  auto zero = torch::zeros({2, d->feature_dim()});
  auto base = d->forward_with_embedding(img, zero);
  auto e1 = torch::randn({2, d->feature_dim()}), e2 = torch::randn({2, d->feature_dim()});
  auto s1 = d->forward_with_embedding(img, e1).score, s2 = d->forward_with_embedding(img, e2).score;
  auto mid = d->forward_with_embedding(img, 0.3 * e1 + 0.7 * e2).score;
  EXPECT_TRUE(torch::allclose(mid, 0.3 * s1 + 0.7 * s2, 1e-4, 1e-5));
  EXPECT_TRUE(torch::allclose(s1 - base.score, (e1 * base.pooled).sum(1), 1e-4, 1e-5));
  EXPECT_FALSE(base.features.empty());
}

TEST(Discriminator, ZeroVideoEmbeddingLeavesUnconditionalScore) {
  Discriminator d(32, 4, 2);
  d->eval();
  torch::NoGradGuard g;
  d->embeddings.zero_();
  auto img = torch::rand({1, 3, 32, 32});
  auto s = d->forward(img, torch::tensor({1}, torch::kLong));
  auto u = d->forward_with_embedding(img, torch::zeros({1, d->feature_dim()}));
  EXPECT_TRUE(torch::equal(s.score, u.score));
}

TEST(Discriminator, UnknownVideoRejected) {
  Discriminator d(32, 4, 2);
  EXPECT_THROW(d->forward(torch::rand({1, 3, 32, 32}), torch::tensor({2}, torch::kLong)), std::out_of_range);
}

TEST(SpectralNorm, TopSingularValueOracle) {
  auto m = torch::diag(torch::tensor({3.0, 1.0, 0.5}, torch::kFloat64));
  EXPECT_NEAR(top_singular_value(m), 3.0, 1e-9);
}

TEST(SpectralNorm, EveryNormalisedWeightHasUnitNorm) {
  auto cfg = test::tiny_config().networks;
  Networks nets(cfg);
  nets.train(true);
  for (int i = 0; i < 3; ++i) {
    nets.generate(torch::randn({2, cfg.identity_dim}), torch::randn({2, cfg.pose_dim}));
    nets.discriminator->forward(torch::rand({2, 3, 32, 32}), torch::tensor({0, 1}, torch::kLong));
  }
  const auto layers = nets.spectral_layers();
  EXPECT_GT(layers.size(), 10u);
  for (const auto& [name, layer] : layers) {
    EXPECT_LE(top_singular_value(layer->effective_weight_matrix()), 1.0 + 1e-3) << name;
  }
}

TEST(Capacity, SmallPoseEncoderMeetsContract) {
  NetworkConfig c = test::tiny_config().networks;
  c.encoder_width = 16;
  c.pose_dim = 64;
  c.identity_dim = 128;
  Networks nets(c);
  EXPECT_LE(static_cast<double>(parameter_count(*nets.pose_encoder)) / parameter_count(*nets.identity_encoder),
            kMaxPoseCapacityRatio);
  EXPECT_TRUE(nets.warnings().empty());
}

TEST(Capacity, LargePoseEncoderWarnsInsteadOfFailing) {
  NetworkConfig c = test::tiny_config().networks;
  c.pose_encoder_preset = "large";
  Networks nets(c);
  ASSERT_EQ(nets.warnings().size(), 1u);
  EXPECT_NE(nets.warnings()[0].find("ablation"), std::string::npos);
}

TEST(Capacity, SmallPresetAboveRatioIsAnError) {
  NetworkConfig c = test::tiny_config().networks;
  c.identity_encoder_preset = "small";
  EXPECT_THROW(Networks{c}, ConfigError);
}

TEST(NetworkConfig, UpsampleBlocksAndValidation) {
  NetworkConfig c;
  c.resolution = 256;
  EXPECT_EQ(c.upsample_blocks(), 6);
  c.resolution = 64;
  EXPECT_EQ(c.upsample_blocks(), 4);
  c.resolution = 48;
  EXPECT_THROW(c.validate(), ConfigError);
}
