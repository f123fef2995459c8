#include "lpr/losses.hpp"

#include <algorithm>
#include <cmath>

#include <ATen/CPUGeneratorImpl.h>
#include <fmt/format.h>

#include "lpr/common.hpp"

namespace lpr {

void LossWeights::validate() const {
  bool any_positive = false;
  for (double w : {dice, content_generic, content_face, adv, fm, emb}) {
    if (!std::isfinite(w) || w < 0.0) throw ConfigError("losses: weights must be finite and non-negative");
    any_positive = any_positive || w > 0.0;
  }
  if (!any_positive) throw ConfigError("losses: at least one weight must be positive");
}

double LossReport::value(const std::string& name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw std::out_of_range("LossReport: no term named " + name);
  return values[static_cast<size_t>(it - names.begin())];
}

bool LossReport::finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); }) &&
         std::isfinite(total);
}

torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& target) {
  if (pred.sizes() != target.sizes()) throw ShapeError("dice_loss: shape mismatch");
  auto inter = (pred * target).sum();
  auto denom = (pred * pred).sum() + (target * target).sum();
  // Both masks empty: numerator and denominator vanish, the loss is defined as 0.
  auto empty = denom.detach().item<double>() == 0.0;
  if (empty) return (pred * 0.0).sum();
  return 1.0 - 2.0 * inter / (denom + kLossEps);
}

torch::Tensor hinge_d_loss(const torch::Tensor& real_score, const torch::Tensor& fake_score) {
  return torch::relu(1.0 - real_score).mean() + torch::relu(1.0 + fake_score).mean();
}

torch::Tensor hinge_g_loss(const torch::Tensor& fake_score) { return -fake_score.mean(); }

torch::Tensor feature_matching_loss(const std::vector<torch::Tensor>& real, const std::vector<torch::Tensor>& fake) {
  if (real.size() != fake.size() || real.empty()) throw ShapeError("feature_matching_loss: layer lists differ");
  torch::Tensor sum;
  for (size_t i = 0; i < real.size(); ++i) {
    if (real[i].sizes() != fake[i].sizes()) {
      throw ShapeError(fmt::format("feature_matching_loss: layer {} shape mismatch", i));
    }
    auto term = torch::abs(real[i] - fake[i]).mean();
    sum = sum.defined() ? sum + term : term;
  }
  return sum / static_cast<double>(real.size());
}

torch::Tensor embedding_match_loss(const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw ShapeError("embedding_match_loss: dimension mismatch");
  auto dot = (a * b).sum(-1);
  auto norms = torch::sqrt((a * a).sum(-1) * (b * b).sum(-1)).clamp_min(kLossEps);
  return (1.0 - dot / norms).mean();
}

RandomConvExtractor::RandomConvExtractor(uint64_t seed, int width) {
  auto gen = at::detail::createCPUGenerator(seed);
  const std::vector<std::pair<int64_t, int64_t>> shapes{{3, width}, {width, 2 * width}, {2 * width, 4 * width},
                                                        {4 * width, 4 * width}};
  strides_ = {1, 2, 2, 2};
  for (const auto& [in, out] : shapes) {
    auto w = at::randn({out, in, 3, 3}, gen, torch::TensorOptions().dtype(torch::kFloat32));
    weights_.push_back(w * std::sqrt(2.0 / static_cast<double>(in * 9)));
  }
}

std::vector<std::string> RandomConvExtractor::layer_names() const { return {"relu1", "relu2", "relu3", "relu4"}; }

void RandomConvExtractor::to(torch::Dtype dtype) {
  for (auto& w : weights_) w = w.to(dtype);
}

std::map<std::string, torch::Tensor> RandomConvExtractor::extract(const torch::Tensor& images,
                                                                  const std::vector<std::string>& layers) {
  std::map<std::string, torch::Tensor> out;
  auto x = images;
  const auto names = layer_names();
  size_t needed = 0;
  for (const auto& l : layers) {
    auto it = std::find(names.begin(), names.end(), l);
    if (it == names.end()) throw ConfigError("feature extractor has no layer '" + l + "'");
    needed = std::max(needed, static_cast<size_t>(it - names.begin()) + 1);
  }
  for (size_t i = 0; i < needed; ++i) {
    x = torch::relu(torch::conv2d(x, weights_[i].to(x.scalar_type()), {}, strides_[i], 1));
    if (std::find(layers.begin(), layers.end(), names[i]) != layers.end()) out.emplace(names[i], x);
  }
  return out;
}

torch::Tensor perceptual_loss(const torch::Tensor& generated, const torch::Tensor& target, FeatureExtractor& extractor,
                              const std::vector<std::string>& layer_set) {
  const auto names = extractor.layer_names();
  for (const auto& l : layer_set) {
    if (std::find(names.begin(), names.end(), l) == names.end()) {
      throw ConfigError("perceptual_loss: extractor does not expose layer '" + l + "'");
    }
  }
  auto fg = extractor.extract(generated, layer_set);
  auto ft = extractor.extract(target, layer_set);
  torch::Tensor sum = torch::zeros({}, generated.options());
  for (const auto& l : layer_set) sum = sum + torch::abs(fg.at(l) - ft.at(l)).mean();
  return sum;
}

void LossContext::validate() const {
  weights.validate();
  if (!generic_extractor) throw ConfigError("losses: no generic feature extractor bound");
  auto check = [](const FeatureExtractor& e, const std::vector<std::string>& layers, const char* which) {
    const auto names = e.layer_names();
    for (const auto& l : layers) {
      if (std::find(names.begin(), names.end(), l) == names.end()) {
        throw ConfigError(fmt::format("losses.{}: extractor has no layer '{}'", which, l));
      }
    }
  };
  check(*generic_extractor, generic_layers, "generic_layers");
  if (face_extractor) check(*face_extractor, face_layers, "face_layers");
}

torch::Tensor composite(const torch::Tensor& rgb, const torch::Tensor& mask, bool use_segmentation) {
  // over black: -1 in the [-1, 1] image range
  return use_segmentation ? (rgb + 1.0) * mask - 1.0 : rgb;
}

std::pair<SideLosses, SideLosses> losses_from_outputs(const GeneratorLossInputs& in, Discriminator& disc,
                                                      const LossContext& ctx) {
  const auto& w = ctx.weights;
  const bool seg = ctx.use_segmentation;
  auto gen = composite(in.output.rgb, in.output.mask, seg);
  auto target = composite(in.target_rgb, in.target_mask, seg);
  const auto n = gen.size(0);

  auto zero = torch::zeros({}, gen.options());
  auto dice = seg ? dice_loss(in.output.mask, in.target_mask) : zero;
  auto content_generic = perceptual_loss(gen, target, *ctx.generic_extractor, ctx.generic_layers);
  auto content_face =
      ctx.face_extractor ? perceptual_loss(gen, target, *ctx.face_extractor, ctx.face_layers) : zero;

  // Real and detached fake share one discriminator pass for the D objective.
  auto emb2 = torch::cat({in.video_embedding, in.video_embedding});
  auto d_pass = disc->forward_with_embedding(torch::cat({target, gen.detach()}), emb2);
  auto real_score = d_pass.score.narrow(0, 0, n);
  auto fake_score_detached = d_pass.score.narrow(0, n, n);
  std::vector<torch::Tensor> real_features;
  for (const auto& f : d_pass.features) real_features.push_back(f.narrow(0, 0, n).detach());

  auto g_pass = disc->forward_with_embedding(gen, in.video_embedding);
  auto adv = hinge_g_loss(g_pass.score);
  auto fm = feature_matching_loss(real_features, g_pass.features);
  auto emb = embedding_match_loss(in.projected_identity, in.video_embedding.detach());

  SideLosses g;
  const double w_dice = seg ? w.dice : 0.0;
  const double w_face = ctx.face_extractor ? w.content_face : 0.0;
  const std::vector<std::pair<std::string, std::pair<double, torch::Tensor>>> terms{
      {"dice", {w_dice, dice}}, {"content_generic", {w.content_generic, content_generic}},
      {"content_face", {w_face, content_face}}, {"adv", {w.adv, adv}},
      {"fm", {w.fm, fm}}, {"emb", {w.emb, emb}}};
  g.total = zero;
  for (const auto& [name, wt] : terms) {
    const auto& [weight, t] = wt;
    if (weight != 0.0) g.total = g.total + weight * t;
    const double v = t.detach().item<double>();
    g.report.names.push_back(name);
    g.report.values.push_back(v);
    g.report.weights.push_back(weight);
    g.report.total += weight * v;
  }

  SideLosses d;
  auto d_real = torch::relu(1.0 - real_score).mean();
  auto d_fake = torch::relu(1.0 + fake_score_detached).mean();
  d.total = d_real + d_fake;
  d.report.names = {"d_real", "d_fake"};
  d.report.values = {d_real.detach().item<double>(), d_fake.detach().item<double>()};
  d.report.weights = {1.0, 1.0};
  d.report.total = d.report.values[0] + d.report.values[1];
  return {std::move(g), std::move(d)};
}

StepLosses total_losses(const EpisodeBatch& batch, Networks& nets, const LossContext& ctx) {
  StepLosses s;
  s.identity = nets.encode_identity(batch.identity_frames);
  s.pose = nets.encode_pose(batch.pose_augmented);
  s.output = nets.generate(s.identity, s.pose);

  const auto& emb_table = nets.discriminator->embeddings;
  const auto lo = batch.video_index.min().item<int64_t>();
  const auto hi = batch.video_index.max().item<int64_t>();
  if (lo < 0 || hi >= emb_table.size(0)) throw std::out_of_range("total_losses: video index out of range");

  GeneratorLossInputs in;
  in.output = s.output;
  in.target_rgb = batch.pose_raw;
  in.target_mask = batch.pose_mask;
  in.projected_identity = nets.identity_projection(s.identity);
  in.video_embedding = emb_table.index_select(0, batch.video_index);
  auto [g, d] = losses_from_outputs(in, nets.discriminator, ctx);
  s.generator_side = std::move(g);
  s.discriminator_side = std::move(d);
  return s;
}

}  // namespace lpr
