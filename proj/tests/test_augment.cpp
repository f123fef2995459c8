#include <gtest/gtest.h>

#include "lpr/augment.hpp"

using namespace lpr;

namespace {

AugmentConfig all_ops() {
  AugmentConfig c;
  c.p_blur = c.p_sharpen = c.p_contrast = c.p_jpeg = 1.0;
  return c;
}

torch::Tensor random_image(int64_t seed, int64_t size = 32) {
  torch::manual_seed(seed);
  return torch::rand({3, size, size}) * 2 - 1;
}

/// Centroid (x, y) in pixel-centre coordinates of the excess over the corner value.
std::pair<double, double> centroid(const torch::Tensor& image) {
  auto g = image.mean(0).to(torch::kFloat64);
  // upper half of the blob only, so background noise carries no weight
  const double lo = g.min().item<double>(), hi = g.max().item<double>();
  auto w = (g - (lo + hi) / 2).clamp_min(0.0);
  const auto h = g.size(0), wd = g.size(1);
  auto ys = torch::arange(h, torch::kFloat64).unsqueeze(1) + 0.5;
  auto xs = torch::arange(wd, torch::kFloat64).unsqueeze(0) + 0.5;
  const double total = w.sum().item<double>();
  return {(w * xs).sum().item<double>() / total, (w * ys).sum().item<double>() / total};
}

}  // namespace

TEST(Augment, DisabledIsIdentity) {
  auto img = random_image(1);
  AugmentConfig c = all_ops();
  c.enabled = false;
  Rng rng(3);
  EXPECT_TRUE(torch::equal(pose_augment(img, c, rng), img));
}

TEST(Augment, UnitScaleNoOpsIsIdentity) {
  auto img = random_image(2);
  AugmentConfig c;
  c.scale_x = c.scale_y = {1.0, 1.0};
  c.p_blur = c.p_sharpen = c.p_contrast = c.p_jpeg = 0.0;
  Rng rng(3);
  EXPECT_TRUE(torch::equal(pose_augment(img, c, rng), img));
}

TEST(Augment, ConstantImageUnchangedByContrast) {
  auto img = torch::full({3, 16, 16}, 0.25f);
  for (double f : {0.6, 1.0, 1.4}) EXPECT_TRUE(torch::equal(contrast(img, f), img));
}

TEST(Augment, ContrastMatchesPerPixelOracle) {
  auto img = random_image(4, 8);
  const double f = 1.3;
  auto out = contrast(img, f);
  const double mean = img.to(torch::kFloat64).mean().item<double>();
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 8; ++y) {
      for (int x = 0; x < 8; ++x) {
        const double expected = (img[c][y][x].item<double>() - mean) * f + mean;
        EXPECT_NEAR(out[c][y][x].item<double>(), expected, 1e-6);
      }
    }
  }
}

TEST(Augment, OutputStaysInRange) {
  Rng rng(5);
  for (int i = 0; i < 20; ++i) {
    auto out = pose_augment(random_image(i), all_ops(), rng);
    EXPECT_GE(out.min().item<float>(), -1.0f);
    EXPECT_LE(out.max().item<float>(), 1.0f);
    EXPECT_EQ(out.sizes(), (std::vector<int64_t>{3, 32, 32}));
  }
}

TEST(Augment, SameRngStateSameOutput) {
  auto img = random_image(6);
  Rng a(42), b(42);
  EXPECT_TRUE(torch::equal(pose_augment(img, all_ops(), a), pose_augment(img, all_ops(), b)));
}

TEST(Augment, DrawConsumptionIndependentOfProbabilities) {
  AugmentConfig never;
  never.p_blur = never.p_sharpen = never.p_contrast = never.p_jpeg = 0.0;
  never.scale_x = never.scale_y = {1.0, 1.0};
  Rng a(9), b(9);
  draw_augment(never, a);
  draw_augment(all_ops(), b);
  EXPECT_EQ(a(), b());
}

TEST(Augment, ScalingAboutCentre) {
  auto img = torch::full({1, 9, 9}, -1.0f);
  img[0][4][4] = 1.0f;
  auto out = scale_about_center(img, 1.7, 0.6, -1.0f);
  EXPECT_EQ(out.argmax().item<int64_t>(), 4 * 9 + 4);
}

TEST(Augment, DotCentroidFollowsOnlyTheScaleMap) {
  Rng rng(123);
  AugmentConfig cfg;
  cfg.p_blur = cfg.p_sharpen = cfg.p_contrast = cfg.p_jpeg = 0.5;
  const int64_t n = 64;
  for (int trial = 0; trial < 40; ++trial) {
    const double dx = uniform(rng, 20, 44), dy = uniform(rng, 20, 44);
    auto ys = torch::arange(n, torch::kFloat64).unsqueeze(1) + 0.5;
    auto xs = torch::arange(n, torch::kFloat64).unsqueeze(0) + 0.5;
    auto blob = torch::exp(-((xs - dx).pow(2) + (ys - dy).pow(2)) / (2 * 2.0 * 2.0));
    auto img = (blob * 1.6 - 0.8).to(torch::kFloat32).unsqueeze(0).expand({3, n, n}).contiguous();
    const auto draw = draw_augment(cfg, rng);
    auto out = apply_augment(img, draw);
    const auto [cx, cy] = centroid(out);
    const double ex = n / 2.0 + draw.scale_x * (dx - n / 2.0);
    const double ey = n / 2.0 + draw.scale_y * (dy - n / 2.0);
    EXPECT_NEAR(cx, ex, 0.5) << "trial " << trial;
    EXPECT_NEAR(cy, ey, 0.5) << "trial " << trial;
  }
}

TEST(Augment, ConfigValidation) {
  AugmentConfig c;
  c.p_blur = 1.5;
  EXPECT_ANY_THROW(c.validate());
  c = AugmentConfig{};
  c.scale_x = {1.2, 0.8};
  EXPECT_ANY_THROW(c.validate());
}
