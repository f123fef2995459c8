#pragma once

#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace lpr {

/// A layer whose weight is divided by its top singular value on every forward.
class SpectralNormed {
 public:
  virtual ~SpectralNormed() = default;
  /// The weight as applied in forward (weight / sigma), as a [out, fan_in] matrix.
  virtual torch::Tensor effective_weight_matrix() const = 0;
};

/// weight / sigma(weight), with sigma the top singular value of the weight
/// reshaped to [out, fan_in]. The singular vectors are treated as constants in
/// backward. When `update_u` is set the left singular vector is written back
/// into `u`; its sign follows the previous `u`.
torch::Tensor spectral_normalize(const torch::Tensor& weight, torch::Tensor& u, bool update_u);

/// Reference top singular value (independent oracle, full power iteration from a fixed start).
double top_singular_value(const torch::Tensor& matrix, int iterations = 2000);

class SNLinearImpl : public torch::nn::Module, public SpectralNormed {
 public:
  SNLinearImpl(int64_t in, int64_t out, bool bias = true);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor effective_weight_matrix() const override;

  torch::Tensor weight, bias, u;
};
TORCH_MODULE(SNLinear);

class SNConv2dImpl : public torch::nn::Module, public SpectralNormed {
 public:
  SNConv2dImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride = 1, int64_t padding = 0);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor effective_weight_matrix() const override;

  torch::Tensor weight, bias, u;
  int64_t stride, padding;
};
TORCH_MODULE(SNConv2d);

/// Every spectrally normalised submodule of `root`, by qualified name.
std::vector<std::pair<std::string, const SpectralNormed*>> spectral_layers(const torch::nn::Module& root,
                                                                           const std::string& prefix = "");

/// Adaptive instance normalisation.
///
/// Each channel of `features` (N x C x H x W, or C x H x W) is normalised to
/// zero mean and unit variance over its spatial extent, then scaled by `std`
/// and shifted by `mean` (N x C, or C). Scales are used as given, sign included.
torch::Tensor adain(const torch::Tensor& features, const torch::Tensor& mean, const torch::Tensor& std,
                    double eps = 1e-5);

int64_t parameter_count(const torch::nn::Module& module);

}  // namespace lpr
