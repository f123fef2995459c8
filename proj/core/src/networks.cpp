#include "lpr/networks.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "lpr/logging.hpp"
#include "lpr/common.hpp"

namespace lpr {
namespace nn = torch::nn;
namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

nn::Conv2d conv(int64_t in, int64_t out, int64_t k, int64_t stride = 1, int64_t groups = 1) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, k).stride(stride).padding(k / 2).groups(groups).bias(false));
}

// MobileNetV2-style inverted residual.
class InvertedResidualImpl : public nn::Module {
 public:
  InvertedResidualImpl(int64_t in, int64_t out, int64_t stride, int64_t expand)
      : residual_(stride == 1 && in == out) {
    const int64_t mid = in * expand;
    body_ = register_module(
        "body", nn::Sequential(conv(in, mid, 1), nn::BatchNorm2d(mid), nn::ReLU6(), conv(mid, mid, 3, stride, mid),
                               nn::BatchNorm2d(mid), nn::ReLU6(), conv(mid, out, 1), nn::BatchNorm2d(out)));
  }
  torch::Tensor forward(torch::Tensor x) {
    auto h = body_->forward(x);
    return residual_ ? h + x : h;
  }

 private:
  bool residual_;
  nn::Sequential body_{nullptr};
};
TORCH_MODULE(InvertedResidual);

// ResNeXt-style bottleneck with grouped 3x3 convolution.
class BottleneckImpl : public nn::Module {
 public:
  BottleneckImpl(int64_t in, int64_t out, int64_t stride) {
    const int64_t mid = std::max<int64_t>(8, out / 2);
    const int64_t groups = mid % 8 == 0 ? 8 : 1;
    body_ = register_module("body", nn::Sequential(conv(in, mid, 1), nn::BatchNorm2d(mid), nn::ReLU(),
                                                   conv(mid, mid, 3, stride, groups), nn::BatchNorm2d(mid),
                                                   nn::ReLU(), conv(mid, out, 1), nn::BatchNorm2d(out)));
    if (stride != 1 || in != out) {
      skip_ = register_module("skip", nn::Sequential(conv(in, out, 1, stride), nn::BatchNorm2d(out)));
    }
  }
  torch::Tensor forward(torch::Tensor x) {
    auto s = skip_ ? skip_->forward(x) : x;
    return torch::relu(body_->forward(x) + s);
  }

 private:
  nn::Sequential body_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(Bottleneck);

}  // namespace

int NetworkConfig::upsample_blocks() const { return static_cast<int>(std::lround(std::log2(resolution / 4.0))); }

void NetworkConfig::validate() const {
  if (resolution < 8 || !is_power_of_two(resolution)) {
    throw ConfigError("networks.resolution must be a power of two >= 8");
  }
  if (pose_dim < 1 || identity_dim < 1 || mlp_hidden < 1) {
    throw ConfigError("networks: embedding and hidden sizes must be positive");
  }
  for (const auto* p : {&pose_encoder_preset, &identity_encoder_preset}) {
    if (*p != "small" && *p != "large") throw ConfigError("networks: encoder preset must be 'small' or 'large'");
  }
  if (encoder_width < 8 || encoder_width % 8 != 0) throw ConfigError("networks.encoder_width must be a multiple of 8");
  if (base_channels < 8 || base_channels % 8 != 0) throw ConfigError("networks.base_channels must be a multiple of 8");
  if (disc_channels < 1) throw ConfigError("networks.disc_channels must be positive");
  if (num_videos < 1) throw ConfigError("networks.num_videos must be positive");
}

// --- encoders ---------------------------------------------------------------

EncoderImpl::EncoderImpl(const std::string& preset_, int width, int out_dim) : preset(preset_) {
  nn::Sequential s;
  int64_t feat = 0;
  if (preset == "small") {
    const int64_t c0 = std::max(8, width / 2);
    s->push_back(conv(3, c0, 3, 2));
    s->push_back(nn::BatchNorm2d(c0));
    s->push_back(nn::ReLU6());
    s->push_back(InvertedResidual(c0, c0, 1, 4));
    s->push_back(InvertedResidual(c0, width, 2, 4));
    s->push_back(InvertedResidual(width, width, 1, 4));
    s->push_back(InvertedResidual(width, width, 2, 4));
    s->push_back(conv(width, 2 * width, 1));
    s->push_back(nn::BatchNorm2d(2 * width));
    s->push_back(nn::ReLU6());
    feat = 2 * width;
  } else if (preset == "large") {
    s->push_back(conv(3, width, 3, 2));
    s->push_back(nn::BatchNorm2d(width));
    s->push_back(nn::ReLU());
    int64_t c = width;
    for (int stage = 0; stage < 3; ++stage) {
      s->push_back(Bottleneck(c, 2 * c, 2));
      s->push_back(Bottleneck(2 * c, 2 * c, 1));
      c *= 2;
    }
    feat = c;
  } else {
    throw ConfigError("unknown encoder preset '" + preset + "'");
  }
  s->push_back(nn::AdaptiveAvgPool2d(1));
  s->push_back(nn::Flatten());
  body = register_module("body", s);
  head = register_module("head", nn::Linear(feat, out_dim));
}

torch::Tensor EncoderImpl::forward(const torch::Tensor& images) { return head(body->forward(images)); }

torch::Tensor encode_identity(const torch::Tensor& frames,
                              const std::function<torch::Tensor(const torch::Tensor&)>& encoder) {
  if (frames.dim() < 1 || frames.size(0) == 0) throw std::invalid_argument("encode_identity: no frames");
  return encoder(frames).mean(0);
}

// --- MLP ----------------------------------------------------------------------

AdainMlpImpl::AdainMlpImpl(int identity_dim, int pose_dim, int hidden, std::vector<int64_t> site_channels)
    : identity_dim_(identity_dim), pose_dim_(pose_dim), sites_(std::move(site_channels)) {
  int64_t width = 0;
  for (auto c : sites_) width += 2 * c;
  fc1 = register_module("fc1", SNLinear(identity_dim + pose_dim, hidden));
  fc2 = register_module("fc2", SNLinear(hidden, width));
}

int64_t AdainMlpImpl::output_width() const {
  int64_t width = 0;
  for (auto c : sites_) width += 2 * c;
  return width;
}

torch::Tensor AdainMlpImpl::forward_flat(const torch::Tensor& identity, const torch::Tensor& pose) {
  if (identity.size(-1) != identity_dim_ || pose.size(-1) != pose_dim_) {
    throw ShapeError(fmt::format("adain_mlp: expected embeddings of size {} and {}, got {} and {}", identity_dim_,
                                 pose_dim_, identity.size(-1), pose.size(-1)));
  }
  return fc2(torch::relu(fc1(torch::cat({identity, pose}, -1))));
}

AdaINParams AdainMlpImpl::forward(const torch::Tensor& identity, const torch::Tensor& pose) {
  return split_adain_params(forward_flat(identity, pose), sites_);
}

AdaINParams split_adain_params(const torch::Tensor& flat, const std::vector<int64_t>& site_channels) {
  AdaINParams p;
  int64_t offset = 0;
  for (auto c : site_channels) {
    auto mean = flat.narrow(-1, offset, c);
    auto std = flat.narrow(-1, offset + c, c);
    p.sites.emplace_back(mean, std);
    offset += 2 * c;
  }
  if (offset != flat.size(-1)) throw ShapeError("split_adain_params: width does not match site layout");
  return p;
}

// --- generator ----------------------------------------------------------------

GenResBlockImpl::GenResBlockImpl(int64_t in, int64_t out, bool upsample) : upsample_(upsample), out_(out) {
  conv1 = register_module("conv1", SNConv2d(in, out, 3, 1, 1));
  conv2 = register_module("conv2", SNConv2d(out, out, 3, 1, 1));
  if (in != out) skip = register_module("skip", SNConv2d(in, out, 1));
}

std::vector<int64_t> GenResBlockImpl::site_channels() const {
  std::vector<int64_t> s{out_, out_};
  if (skip) s.push_back(out_);
  return s;
}

torch::Tensor GenResBlockImpl::forward(const torch::Tensor& x, const AdaINParams& p, size_t& site) {
  auto in = upsample_ ? torch::nn::functional::interpolate(
                            x, torch::nn::functional::InterpolateFuncOptions()
                                   .scale_factor(std::vector<double>{2.0, 2.0})
                                   .mode(torch::kNearest))
                      : x;
  auto apply = [&](const torch::Tensor& t) {
    const auto& [mean, std] = p.sites.at(site++);
    return adain(t, mean, std);
  };
  auto h = apply(conv1(in));
  h = apply(conv2(torch::relu(h)));
  auto s = skip ? apply(skip(in)) : in;
  return h + s;
}

GeneratorImpl::GeneratorImpl(int resolution, int base_channels) {
  const int up = static_cast<int>(std::lround(std::log2(resolution / 4.0)));
  const int64_t c0 = base_channels;
  constant = register_parameter("constant", torch::randn({1, c0, 4, 4}));
  for (int i = 0; i < 2; ++i) {
    blocks_.push_back(register_module(fmt::format("const{}", i), GenResBlock(c0, c0, false)));
  }
  // Channels halve over the last three upsampling blocks (c0 -> c0/8).
  const int halving_start = up - std::min(3, up);
  int64_t c = c0;
  for (int b = 0; b < up; ++b) {
    const int64_t next = b >= halving_start ? c / 2 : c;
    blocks_.push_back(register_module(fmt::format("up{}", b), GenResBlock(c, next, true)));
    block_channels_.push_back(next);
    c = next;
  }
  for (const auto& b : blocks_) {
    auto s = b->site_channels();
    sites_.insert(sites_.end(), s.begin(), s.end());
  }
  sites_.push_back(c);  // head AdaIN
  to_image = register_module("to_image", SNConv2d(c, 4, 1));
}

GeneratorOutput GeneratorImpl::forward(const AdaINParams& params, int64_t batch) {
  if (params.sites.size() != sites_.size()) throw ShapeError("generator: AdaIN site count mismatch");
  size_t site = 0;
  auto x = constant.expand({batch, constant.size(1), 4, 4});
  for (auto& b : blocks_) x = b->forward(x, params, site);
  const auto& [mean, std] = params.sites.at(site++);
  auto t = torch::tanh(to_image(torch::relu(adain(x, mean, std))));
  GeneratorOutput out;
  out.rgb = t.narrow(1, 0, 3);
  out.mask = (t.narrow(1, 3, 1) + 1.0) * 0.5;
  return out;
}

// --- discriminator ------------------------------------------------------------

DiscBlockImpl::DiscBlockImpl(int64_t in, int64_t out, bool first) : first_(first) {
  conv1 = register_module("conv1", SNConv2d(in, out, 3, 1, 1));
  conv2 = register_module("conv2", SNConv2d(out, out, 3, 1, 1));
  skip = register_module("skip", SNConv2d(in, out, 1));
}

torch::Tensor DiscBlockImpl::forward(const torch::Tensor& x) {
  auto h = first_ ? x : torch::relu(x);
  h = conv2(torch::relu(conv1(h)));
  h = torch::avg_pool2d(h, 2);
  auto s = first_ ? skip(torch::avg_pool2d(x, 2)) : torch::avg_pool2d(skip(x), 2);
  return h + s;
}

DiscriminatorImpl::DiscriminatorImpl(int resolution, int base_channels, int num_videos) {
  const int n = static_cast<int>(std::lround(std::log2(resolution / 4.0)));
  int64_t in = 3;
  int64_t c = base_channels;
  for (int i = 0; i < n; ++i) {
    const int64_t out = std::min<int64_t>(static_cast<int64_t>(base_channels) << i, 8LL * base_channels);
    blocks_.push_back(register_module(fmt::format("down{}", i), DiscBlock(in, out, i == 0)));
    in = out;
    c = out;
  }
  feature_dim_ = c;
  head = register_module("head", SNLinear(c, 1));
  embeddings = register_parameter("embeddings", torch::randn({num_videos, c}) * 0.02);
}

DiscriminatorOutput DiscriminatorImpl::features_and_head(const torch::Tensor& images) {
  DiscriminatorOutput out;
  auto x = images;
  for (auto& b : blocks_) {
    x = b->forward(x);
    out.features.push_back(x);
  }
  out.pooled = torch::relu(x).sum({2, 3});
  out.score = head(out.pooled).squeeze(-1);
  return out;
}

DiscriminatorOutput DiscriminatorImpl::forward(const torch::Tensor& images, const torch::Tensor& video_index) {
  if (video_index.numel() != images.size(0)) throw ShapeError("discriminator: one video index per image required");
  const auto lo = video_index.min().item<int64_t>();
  const auto hi = video_index.max().item<int64_t>();
  if (lo < 0 || hi >= num_videos()) {
    throw std::out_of_range(fmt::format("discriminator: video index {} outside [0, {})", lo < 0 ? lo : hi,
                                        num_videos()));
  }
  return forward_with_embedding(images, embeddings.index_select(0, video_index));
}

DiscriminatorOutput DiscriminatorImpl::forward_with_embedding(const torch::Tensor& images,
                                                              const torch::Tensor& embedding) {
  if (embedding.size(-1) != feature_dim_) throw ShapeError("discriminator: embedding width mismatch");
  auto out = features_and_head(images);
  out.score = out.score + (out.pooled * embedding).sum(-1);
  return out;
}

// --- bundle -------------------------------------------------------------------

Networks::Networks(NetworkConfig config) : config_(std::move(config)) {
  config_.validate();
  const int R = config_.resolution;
  identity_encoder = Encoder(config_.identity_encoder_preset, config_.encoder_width, config_.identity_dim);
  pose_encoder = Encoder(config_.pose_encoder_preset, config_.encoder_width, config_.pose_dim);
  generator = Generator(R, config_.base_channels);
  mlp = AdainMlp(config_.identity_dim, config_.pose_dim, config_.mlp_hidden, generator->site_channels());
  discriminator = Discriminator(R, config_.disc_channels, config_.num_videos);
  identity_projection = nn::Linear(config_.identity_dim, discriminator->feature_dim());

  const double ratio = static_cast<double>(parameter_count(*pose_encoder)) /
                       static_cast<double>(parameter_count(*identity_encoder));
  if (config_.pose_encoder_preset == "small") {
    if (ratio > kMaxPoseCapacityRatio) {
      throw ConfigError(fmt::format(
          "capacity contract violated: pose encoder has {:.3f}x the parameters of the identity encoder (max {})",
          ratio, kMaxPoseCapacityRatio));
    }
  } else if (ratio > kMaxPoseCapacityRatio) {
    warnings_.push_back(fmt::format(
        "ablation: pose encoder preset '{}' has {:.3f}x the identity encoder's parameters, above the {} capacity "
        "ratio; pose-identity disentanglement is not expected",
        config_.pose_encoder_preset, ratio, kMaxPoseCapacityRatio));
    logging::warn(warnings_.back());
  }
}

std::vector<std::pair<std::string, std::shared_ptr<nn::Module>>> Networks::modules() const {
  return {{"identity_encoder", identity_encoder.ptr()}, {"pose_encoder", pose_encoder.ptr()},
          {"adain_mlp", mlp.ptr()},                     {"generator", generator.ptr()},
          {"discriminator", discriminator.ptr()},       {"identity_projection", identity_projection.ptr()}};
}

void Networks::train(bool on) {
  for (auto& [name, m] : modules()) m->train(on);
}

torch::Tensor Networks::encode_identity(const torch::Tensor& frames) {
  const int R = config_.resolution;
  if (frames.dim() == 4) {
    if (frames.size(-1) != R || frames.size(-2) != R) throw ShapeError("encode_identity: wrong resolution");
    return lpr::encode_identity(frames, [&](const torch::Tensor& x) { return identity_encoder(x); });
  }
  if (frames.dim() != 5 || frames.size(-1) != R || frames.size(-2) != R) {
    throw ShapeError("encode_identity: expected B x K x 3 x R x R frames");
  }
  const auto b = frames.size(0);
  const auto k = frames.size(1);
  if (k == 0) throw std::invalid_argument("encode_identity: no frames");
  auto per_frame = identity_encoder(frames.reshape({b * k, 3, R, R}));
  return per_frame.view({b, k, -1}).mean(1);
}

torch::Tensor Networks::encode_pose(const torch::Tensor& frames) {
  const int R = config_.resolution;
  if (frames.size(-1) != R || frames.size(-2) != R || frames.size(-3) != 3) {
    throw ShapeError(fmt::format("encode_pose: expected 3x{}x{} frames", R, R));
  }
  if (frames.dim() == 3) return pose_encoder(frames.unsqueeze(0)).squeeze(0);
  return pose_encoder(frames);
}

GeneratorOutput Networks::generate(const torch::Tensor& identity, const torch::Tensor& pose) {
  const bool single = identity.dim() == 1;
  auto xi = single ? identity.unsqueeze(0) : identity;
  auto yp = pose.dim() == 1 ? pose.unsqueeze(0) : pose;
  auto out = generator->forward(mlp->forward(xi, yp), xi.size(0));
  if (single) {
    out.rgb = out.rgb.squeeze(0);
    out.mask = out.mask.squeeze(0);
  }
  return out;
}

std::vector<torch::Tensor> Networks::generator_side_parameters() const {
  std::vector<torch::Tensor> out;
  for (const auto& [name, m] : modules()) {
    if (name == "discriminator") continue;
    auto ps = m->parameters();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

std::vector<torch::Tensor> Networks::finetune_generator_parameters() const {
  auto out = mlp->parameters();
  auto g = generator->parameters();
  out.insert(out.end(), g.begin(), g.end());
  return out;
}

std::vector<torch::Tensor> Networks::discriminator_parameters() const { return discriminator->parameters(); }

std::vector<std::pair<std::string, torch::Tensor>> Networks::named_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& [name, m] : modules()) {
    for (const auto& p : m->named_parameters(true)) out.emplace_back(name + "." + p.key(), p.value());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> Networks::named_buffers() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& [name, m] : modules()) {
    for (const auto& b : m->named_buffers(true)) out.emplace_back(name + "." + b.key(), b.value());
  }
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<std::pair<std::string, torch::Tensor>> Networks::named_state() const {
  auto out = named_parameters();
  auto buffers = named_buffers();
  out.insert(out.end(), buffers.begin(), buffers.end());
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return out;
}

std::vector<std::pair<std::string, const SpectralNormed*>> Networks::spectral_layers() const {
  std::vector<std::pair<std::string, const SpectralNormed*>> out;
  for (const auto& [name, m] : modules()) {
    auto layers = lpr::spectral_layers(*m, name);
    out.insert(out.end(), layers.begin(), layers.end());
  }
  return out;
}

}  // namespace lpr
