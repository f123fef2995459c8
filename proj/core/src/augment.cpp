#include "lpr/augment.hpp"

#include <cmath>

#include "lpr/dataset.hpp"
#include "lpr/image_io.hpp"

namespace lpr {
namespace {

void check_range(const Range& r, const char* name) {
  if (!(r.first <= r.second)) throw ConfigError(std::string("augment.") + name + ": lo > hi");
}

void check_probability(double p, const char* name) {
  if (!(p >= 0.0 && p <= 1.0)) {
    throw ConfigError(std::string("augment.") + name + ": probability outside [0, 1]");
  }
}

torch::Tensor gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  auto x = torch::arange(-radius, radius + 1, torch::kFloat64);
  auto k = torch::exp(-(x * x) / (2.0 * sigma * sigma));
  return (k / k.sum()).to(torch::kFloat32);
}

}  // namespace

void AugmentConfig::validate() const {
  check_range(scale_x, "scale_x");
  check_range(scale_y, "scale_y");
  check_range(blur_sigma, "blur_sigma");
  check_range(sharpen_amount, "sharpen_amount");
  check_range(contrast_factor, "contrast_factor");
  if (jpeg_quality.first > jpeg_quality.second) throw ConfigError("augment.jpeg_quality: lo > hi");
  if (jpeg_quality.first < 1 || jpeg_quality.second > 100) {
    throw ConfigError("augment.jpeg_quality: must lie in [1, 100]");
  }
  if (scale_x.first <= 0.0 || scale_y.first <= 0.0) throw ConfigError("augment.scale: must be positive");
  if (blur_sigma.first <= 0.0) throw ConfigError("augment.blur_sigma: must be positive");
  check_probability(p_blur, "p_blur");
  check_probability(p_sharpen, "p_sharpen");
  check_probability(p_contrast, "p_contrast");
  check_probability(p_jpeg, "p_jpeg");
}

AugmentDraw draw_augment(const AugmentConfig& config, Rng& rng) {
  AugmentDraw d;
  if (!config.enabled) return d;
  // Every draw is consumed regardless of outcome so the stream layout is fixed.
  d.scale_x = uniform(rng, config.scale_x.first, config.scale_x.second);
  d.scale_y = uniform(rng, config.scale_y.first, config.scale_y.second);
  const bool blur = bernoulli(rng, config.p_blur);
  const double sigma = uniform(rng, config.blur_sigma.first, config.blur_sigma.second);
  const bool sharp = bernoulli(rng, config.p_sharpen);
  const double amount = uniform(rng, config.sharpen_amount.first, config.sharpen_amount.second);
  const bool contr = bernoulli(rng, config.p_contrast);
  const double factor = uniform(rng, config.contrast_factor.first, config.contrast_factor.second);
  const bool jpeg = bernoulli(rng, config.p_jpeg);
  const auto quality = uniform_int(rng, config.jpeg_quality.first, config.jpeg_quality.second);
  if (blur) d.blur_sigma = sigma;
  if (sharp) d.sharpen_amount = amount;
  if (contr) d.contrast_factor = factor;
  if (jpeg) d.jpeg_quality = static_cast<int>(quality);
  return d;
}

torch::Tensor scale_about_center(const torch::Tensor& image, double sx, double sy, float pad_value) {
  const auto h = image.size(1);
  const auto w = image.size(2);
  const double cx = (static_cast<double>(w) - 1.0) / 2.0;
  const double cy = (static_cast<double>(h) - 1.0) / 2.0;
  // Output pixel u samples source cx + (u - cx) / sx.
  AxisMap mx{cx - cx / sx, 1.0 / sx, -std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity()};
  AxisMap my{cy - cy / sy, 1.0 / sy, -std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity()};
  return resample_bilinear(image, mx, my, w, h, pad_value);
}

torch::Tensor gaussian_blur(const torch::Tensor& image, double sigma) {
  auto k = gaussian_kernel(sigma);
  const auto r = (k.size(0) - 1) / 2;
  const auto c = image.size(0);
  auto x = image.unsqueeze(0);
  auto kx = k.view({1, 1, 1, -1}).repeat({c, 1, 1, 1});
  auto ky = k.view({1, 1, -1, 1}).repeat({c, 1, 1, 1});
  namespace F = torch::nn::functional;
  x = F::pad(x, F::PadFuncOptions({r, r, 0, 0}).mode(torch::kReplicate));
  x = F::conv2d(x, kx, F::Conv2dFuncOptions().groups(c));
  x = F::pad(x, F::PadFuncOptions({0, 0, r, r}).mode(torch::kReplicate));
  x = F::conv2d(x, ky, F::Conv2dFuncOptions().groups(c));
  return x.squeeze(0);
}

torch::Tensor sharpen(const torch::Tensor& image, double amount) {
  return image + amount * (image - gaussian_blur(image, 1.0));
}

torch::Tensor contrast(const torch::Tensor& image, double factor) {
  auto mean = image.mean();
  return (image - mean) * factor + mean;
}

torch::Tensor apply_augment(const torch::Tensor& image, const AugmentDraw& d) {
  if (image.dim() != 3 || image.size(0) != 3) throw ShapeError("pose_augment: expected 3xHxW image");
  torch::NoGradGuard no_grad;
  auto x = image;
  if (d.scale_x != 1.0 || d.scale_y != 1.0) x = scale_about_center(x, d.scale_x, d.scale_y, -1.0f);
  if (d.blur_sigma > 0.0) x = gaussian_blur(x, d.blur_sigma);
  if (d.sharpen_amount > 0.0) x = sharpen(x, d.sharpen_amount);
  if (d.contrast_factor != 1.0) x = contrast(x, d.contrast_factor);
  x = x.clamp(-1.0, 1.0);
  if (d.jpeg_quality > 0) x = jpeg_roundtrip(x, d.jpeg_quality);
  return x.contiguous();
}

torch::Tensor pose_augment(const torch::Tensor& image, const AugmentConfig& config, Rng& rng) {
  if (!config.enabled) return image.clone();
  return apply_augment(image, draw_augment(config, rng));
}

}  // namespace lpr
