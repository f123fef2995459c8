#pragma once

#include <utility>

#include <torch/torch.h>

#include "lpr/common.hpp"

namespace lpr {

using Range = std::pair<double, double>;

/// Parameters of the pose augmentation applied to the pose-source frame.
///
/// Augmentation is a corruption that keeps head pose legible while
/// perturbing identity cues: independent horizontal and vertical rescaling
/// about the image centre followed by optional photometric operations, each
/// drawn with its own probability (several may stack in one call).
struct AugmentConfig {
  bool enabled = true;
  Range scale_x{0.8, 1.2};
  Range scale_y{0.8, 1.2};
  double p_blur = 0.3;
  double p_sharpen = 0.3;
  double p_contrast = 0.3;
  double p_jpeg = 0.3;
  Range blur_sigma{0.5, 2.0};
  Range sharpen_amount{0.5, 2.0};
  Range contrast_factor{0.6, 1.4};
  std::pair<int, int> jpeg_quality{30, 90};

  /// Throws ConfigError on inverted ranges or probabilities outside [0, 1].
  void validate() const;
};

/// Transformation actually drawn for one call; exposed for tests and logs.
struct AugmentDraw {
  double scale_x = 1.0;
  double scale_y = 1.0;
  double blur_sigma = 0.0;      // 0: not applied
  double sharpen_amount = 0.0;  // 0: not applied
  double contrast_factor = 1.0;
  int jpeg_quality = 0;  // 0: not applied
};

AugmentDraw draw_augment(const AugmentConfig& config, Rng& rng);

/// Applies a drawn transformation to a 3xHxW image in [-1, 1].
torch::Tensor apply_augment(const torch::Tensor& image, const AugmentDraw& draw);

/// pose_augment: draw + apply. Output stays in [-1, 1] and has the input shape.
torch::Tensor pose_augment(const torch::Tensor& image, const AugmentConfig& config, Rng& rng);

// Individual operations (CHW float tensors).

/// Anisotropic rescale about the image centre; uncovered pixels become pad_value.
torch::Tensor scale_about_center(const torch::Tensor& image, double sx, double sy, float pad_value);
torch::Tensor gaussian_blur(const torch::Tensor& image, double sigma);
torch::Tensor sharpen(const torch::Tensor& image, double amount);
/// (x - mean) * factor + mean, with mean taken over the whole image.
torch::Tensor contrast(const torch::Tensor& image, double factor);

}  // namespace lpr
