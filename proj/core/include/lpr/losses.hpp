#pragma once

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "lpr/dataset.hpp"
#include "lpr/networks.hpp"

namespace lpr {

inline constexpr double kLossEps = 1e-7;

struct LossWeights {
  double dice = 1.0;
  double content_generic = 10.0;
  double content_face = 0.01;
  double adv = 1.0;
  double fm = 10.0;
  double emb = 1.0;

  void validate() const;
};

/// Per-term values and their weighted total (total = sum of weight * value).
struct LossReport {
  std::vector<std::string> names;
  std::vector<double> values;
  std::vector<double> weights;
  double total = 0.0;

  double value(const std::string& name) const;
  bool finite() const;
};

// --- elementary terms ---------------------------------------------------------

/// 1 - 2 sum(p g) / (sum p^2 + sum g^2 + eps); both-empty masks give 0.
torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& target);
/// mean(max(0, 1 - real)) + mean(max(0, 1 + fake))
torch::Tensor hinge_d_loss(const torch::Tensor& real_score, const torch::Tensor& fake_score);
/// -mean(fake)
torch::Tensor hinge_g_loss(const torch::Tensor& fake_score);
/// Per-layer mean absolute difference, averaged over layers.
torch::Tensor feature_matching_loss(const std::vector<torch::Tensor>& real, const std::vector<torch::Tensor>& fake);
/// 1 - cosine similarity along the last dimension, averaged over rows.
torch::Tensor embedding_match_loss(const torch::Tensor& projected_identity, const torch::Tensor& video_embedding);

/// Named-activation feature extractor used by content losses.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::vector<std::string> layer_names() const = 0;
  /// Activations for the requested layers.
  virtual std::map<std::string, torch::Tensor> extract(const torch::Tensor& images,
                                                       const std::vector<std::string>& layers) = 0;
};

/// Fixed-seed random-weight conv stack exposing relu1..relu4 (frozen).
class RandomConvExtractor : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(uint64_t seed = 1234, int width = 16);
  std::vector<std::string> layer_names() const override;
  std::map<std::string, torch::Tensor> extract(const torch::Tensor& images,
                                               const std::vector<std::string>& layers) override;
  void to(torch::Dtype dtype);

 private:
  std::vector<torch::Tensor> weights_;
  std::vector<int64_t> strides_;
};

/// Sum over layer_set of the mean absolute activation difference.
torch::Tensor perceptual_loss(const torch::Tensor& generated, const torch::Tensor& target, FeatureExtractor& extractor,
                              const std::vector<std::string>& layer_set);

struct LossContext {
  LossWeights weights;
  bool use_segmentation = true;
  std::shared_ptr<FeatureExtractor> generic_extractor;
  std::shared_ptr<FeatureExtractor> face_extractor;  // optional
  std::vector<std::string> generic_layers{"relu1", "relu2", "relu3", "relu4"};
  std::vector<std::string> face_layers;

  /// Throws ConfigError when a layer is not exposed by its extractor.
  void validate() const;
};

/// Loss terms that only need the generator outputs and targets.
struct SideLosses {
  torch::Tensor total;  // differentiable weighted sum
  LossReport report;
};

/// Inputs for the generator-side objective of one batch.
struct GeneratorLossInputs {
  GeneratorOutput output;
  torch::Tensor target_rgb;   // N x 3 x R x R
  torch::Tensor target_mask;  // N x 1 x R x R
  torch::Tensor projected_identity;  // N x Cf
  torch::Tensor video_embedding;     // N x Cf (treated as a constant)
};

struct StepLosses {
  SideLosses generator_side;
  SideLosses discriminator_side;
  GeneratorOutput output;
  torch::Tensor identity;  // x̄, B x d_i
  torch::Tensor pose;      // y, B x d_p
};

/// Composites images with masks when segmentation is on, otherwise passes them through.
torch::Tensor composite(const torch::Tensor& rgb, const torch::Tensor& mask, bool use_segmentation);

/// Generator-side (G) and discriminator-side (D) objectives given generator
/// outputs. The discriminator is conditioned on `disc_embedding` rows.
std::pair<SideLosses, SideLosses> losses_from_outputs(const GeneratorLossInputs& in, Discriminator& disc,
                                                      const LossContext& ctx);

/// total_losses: full forward pass of an episode batch through all networks.
StepLosses total_losses(const EpisodeBatch& batch, Networks& nets, const LossContext& ctx);

}  // namespace lpr
