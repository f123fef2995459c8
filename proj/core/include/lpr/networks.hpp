#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "lpr/layers.hpp"

namespace lpr {

/// Upper bound on param_count(pose encoder) / param_count(identity encoder)
/// for the "small" pose encoder preset.
inline constexpr double kMaxPoseCapacityRatio = 0.25;

struct NetworkConfig {
  int resolution = 256;
  int pose_dim = 256;
  int identity_dim = 512;
  std::string pose_encoder_preset = "small";
  std::string identity_encoder_preset = "large";
  int encoder_width = 64;
  int mlp_hidden = 768;
  int base_channels = 512;  // channels of the learnable 4x4 constant
  int disc_channels = 64;
  int num_videos = 1;

  /// log2(resolution / 4)
  int upsample_blocks() const;
  void validate() const;
};

struct GeneratorOutput {
  torch::Tensor rgb;   // N x 3 x R x R in [-1, 1]
  torch::Tensor mask;  // N x 1 x R x R in [0, 1]
};

/// Per-site AdaIN coefficients in generator order; each tensor is N x C.
struct AdaINParams {
  std::vector<std::pair<torch::Tensor, torch::Tensor>> sites;  // (mean, std)
};

// --- encoders --------------------------------------------------------------

/// Image encoder, "small" (depthwise inverted-residual stack) or "large"
/// (grouped-convolution bottleneck stack). Both use batch normalisation.
class EncoderImpl : public torch::nn::Module {
 public:
  EncoderImpl(const std::string& preset, int width, int out_dim);
  torch::Tensor forward(const torch::Tensor& images);  // N x 3 x R x R -> N x out_dim

  std::string preset;

 private:
  torch::nn::Sequential body{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(Encoder);

/// Mean of per-frame identity embeddings.
torch::Tensor encode_identity(const torch::Tensor& frames,
                              const std::function<torch::Tensor(const torch::Tensor&)>& encoder);

// --- AdaIN parameter MLP ---------------------------------------------------

/// ReLU perceptron with one hidden layer mapping [identity, pose] to AdaIN
/// coefficients. Output layout: for each site in order, C means then C stds.
class AdainMlpImpl : public torch::nn::Module {
 public:
  AdainMlpImpl(int identity_dim, int pose_dim, int hidden, std::vector<int64_t> site_channels);
  AdaINParams forward(const torch::Tensor& identity, const torch::Tensor& pose);
  torch::Tensor forward_flat(const torch::Tensor& identity, const torch::Tensor& pose);
  int64_t output_width() const;
  const std::vector<int64_t>& site_channels() const { return sites_; }

  SNLinear fc1{nullptr}, fc2{nullptr};

 private:
  int identity_dim_, pose_dim_;
  std::vector<int64_t> sites_;
};
TORCH_MODULE(AdainMlp);

AdaINParams split_adain_params(const torch::Tensor& flat, const std::vector<int64_t>& site_channels);

// --- generator -------------------------------------------------------------

class GenResBlockImpl : public torch::nn::Module {
 public:
  GenResBlockImpl(int64_t in, int64_t out, bool upsample);
  torch::Tensor forward(const torch::Tensor& x, const AdaINParams& p, size_t& site);
  std::vector<int64_t> site_channels() const;

 private:
  bool upsample_;
  int64_t out_;
  SNConv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
};
TORCH_MODULE(GenResBlock);

/// Upsampling generator without downsampling blocks: learnable 4x4 constant,
/// two constant-resolution residual blocks, log2(R/4) upsampling blocks, and a
/// head AdaIN -> ReLU -> 1x1 conv -> tanh producing RGB plus mask.
class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl(int resolution, int base_channels);
  GeneratorOutput forward(const AdaINParams& params, int64_t batch);
  const std::vector<int64_t>& site_channels() const { return sites_; }
  /// Output channels of each upsampling block.
  const std::vector<int64_t>& block_channels() const { return block_channels_; }

  torch::Tensor constant;

 private:
  std::vector<GenResBlock> blocks_;
  SNConv2d to_image{nullptr};
  std::vector<int64_t> sites_;
  std::vector<int64_t> block_channels_;
};
TORCH_MODULE(Generator);

// --- discriminator ---------------------------------------------------------

struct DiscriminatorOutput {
  torch::Tensor score;                  // N
  std::vector<torch::Tensor> features;  // per block activations
  torch::Tensor pooled;                 // N x Cf
};

class DiscBlockImpl : public torch::nn::Module {
 public:
  DiscBlockImpl(int64_t in, int64_t out, bool first);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  bool first_;
  SNConv2d conv1{nullptr}, conv2{nullptr}, skip{nullptr};
};
TORCH_MODULE(DiscBlock);

/// Projection discriminator: unconditional linear head plus inner product of
/// a per-video embedding with sum-pooled features.
class DiscriminatorImpl : public torch::nn::Module {
 public:
  DiscriminatorImpl(int resolution, int base_channels, int num_videos);
  /// Training mode: conditioning by video index (rejects unknown indices).
  DiscriminatorOutput forward(const torch::Tensor& images, const torch::Tensor& video_index);
  /// Conditioning by explicit embedding rows (N x Cf, or Cf broadcast).
  DiscriminatorOutput forward_with_embedding(const torch::Tensor& images, const torch::Tensor& embedding);
  int64_t feature_dim() const { return feature_dim_; }
  int64_t num_videos() const { return embeddings.size(0); }

  torch::Tensor embeddings;  // num_videos x Cf

 private:
  DiscriminatorOutput features_and_head(const torch::Tensor& images);

  std::vector<DiscBlock> blocks_;
  SNLinear head{nullptr};
  int64_t feature_dim_;
};
TORCH_MODULE(Discriminator);

// --- bundle ----------------------------------------------------------------

/// All learnable networks of the reenactment system.
class Networks {
 public:
  explicit Networks(NetworkConfig config);

  const NetworkConfig& config() const { return config_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// x̄ for a batch of episodes: B x K x 3 x R x R -> B x d_i (or K x 3 x R x R -> d_i).
  torch::Tensor encode_identity(const torch::Tensor& frames);
  /// y for B x 3 x R x R (or a single 3 x R x R frame).
  torch::Tensor encode_pose(const torch::Tensor& frames);
  GeneratorOutput generate(const torch::Tensor& identity, const torch::Tensor& pose);

  void train(bool on = true);

  /// F, G, MLP, generator and the identity projection (the generator side).
  std::vector<torch::Tensor> generator_side_parameters() const;
  std::vector<torch::Tensor> finetune_generator_parameters() const;  // MLP + generator
  std::vector<torch::Tensor> discriminator_parameters() const;

  /// Every parameter and buffer, keyed "<network>.<name>", sorted by key.
  std::vector<std::pair<std::string, torch::Tensor>> named_state() const;
  std::vector<std::pair<std::string, torch::Tensor>> named_parameters() const;
  std::vector<std::pair<std::string, torch::Tensor>> named_buffers() const;
  std::vector<std::pair<std::string, const SpectralNormed*>> spectral_layers() const;

  Encoder identity_encoder{nullptr};
  Encoder pose_encoder{nullptr};
  AdainMlp mlp{nullptr};
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  torch::nn::Linear identity_projection{nullptr};

 private:
  std::vector<std::pair<std::string, std::shared_ptr<torch::nn::Module>>> modules() const;

  NetworkConfig config_;
  std::vector<std::string> warnings_;
};

}  // namespace lpr
