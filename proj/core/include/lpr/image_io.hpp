#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace lpr {

// Images are float32 CHW tensors: RGB in [-1, 1], masks in [0, 1].

torch::Tensor load_rgb(const std::filesystem::path& path);
torch::Tensor load_mask(const std::filesystem::path& path);

void save_rgb(const std::filesystem::path& path, const torch::Tensor& rgb);
void save_mask(const std::filesystem::path& path, const torch::Tensor& mask);

/// Round-trips an RGB tensor through 8-bit JPEG at the given quality.
torch::Tensor jpeg_roundtrip(const torch::Tensor& rgb, int quality);

}  // namespace lpr
