#include "lpr/config.hpp"

#include <fstream>
#include <set>

#include <fmt/format.h>

namespace lpr {
namespace {

using nlohmann::json;

/// Strict reader over one JSON object; remembers its path for error messages.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(fmt::format("{}: expected an object", path_or_root()));
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(fmt::format("{}: wrong value type", child(key)));
    }
  }

  void get_range(const char* key, Range& out) {
    std::vector<double> v{out.first, out.second};
    get(key, v);
    if (v.size() != 2) throw ConfigError(fmt::format("{}: expected [lo, hi]", child(key)));
    out = {v[0], v[1]};
  }

  Section sub(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    static const json empty = json::object();
    return Section(it == j_.end() ? empty : *it, child(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(fmt::format("{}: unknown key", child(k.c_str())));
    }
  }

 private:
  std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string path_or_root() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  networks.validate();
  augment.validate();
  losses.weights.validate();
  if (dataset.k < 1) throw ConfigError("dataset.k must be >= 1");
  if (dataset.frame_stride < 1) throw ConfigError("dataset.frame_stride must be >= 1");
  if (!(dataset.crop_growth >= 0.0)) throw ConfigError("dataset.crop_growth must be >= 0");
  if (dataset.prefetch_capacity < 1) throw ConfigError("dataset.prefetch_capacity must be >= 1");
  if (networks.resolution % 4 != 0) throw ConfigError("networks.resolution must be a multiple of 4");
  if (trainer.batch_size < 1) throw ConfigError("trainer.batch_size must be >= 1");
  if (trainer.steps < 0 || trainer.finetune_steps < 0) throw ConfigError("trainer: step counts must be >= 0");
  if (trainer.lr_g < 0 || trainer.lr_d < 0) throw ConfigError("trainer: learning rates must be >= 0");
  if (trainer.log_every < 1 || trainer.sample_every < 1 || trainer.checkpoint_every < 1) {
    throw ConfigError("trainer: intervals must be >= 1");
  }
  if (trainer.finetune_frames < 1 || trainer.finetune_frames > 32) {
    throw ConfigError("trainer.finetune_frames must lie in [1, 32]");
  }
  if (trainer.finetune_batch_size < 1) throw ConfigError("trainer.finetune_batch_size must be >= 1");
  if (evaluation.queries_per_group < 1) throw ConfigError("evaluation.queries_per_group must be >= 1");
  for (int n : evaluation.topn) {
    if (n < 1) throw ConfigError("evaluation.topn entries must be >= 1");
  }
  if (losses.extractor_width < 1) throw ConfigError("losses.extractor_width must be >= 1");
  const std::set<std::string> layers{"relu1", "relu2", "relu3", "relu4"};
  for (const auto& l : losses.generic_layers) {
    if (!layers.count(l)) throw ConfigError("losses.generic_layers: unknown layer '" + l + "'");
  }
}

nlohmann::json RunConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["dataset"] = {{"crop_growth", dataset.crop_growth},
                  {"frame_stride", dataset.frame_stride},
                  {"k", dataset.k},
                  {"use_segmentation", dataset.use_segmentation},
                  {"prefetch_capacity", dataset.prefetch_capacity}};
  j["augment"] = {{"enabled", augment.enabled},
                  {"scale_x", {augment.scale_x.first, augment.scale_x.second}},
                  {"scale_y", {augment.scale_y.first, augment.scale_y.second}},
                  {"p_blur", augment.p_blur},
                  {"p_sharpen", augment.p_sharpen},
                  {"p_contrast", augment.p_contrast},
                  {"p_jpeg", augment.p_jpeg},
                  {"blur_sigma", {augment.blur_sigma.first, augment.blur_sigma.second}},
                  {"sharpen_amount", {augment.sharpen_amount.first, augment.sharpen_amount.second}},
                  {"contrast_factor", {augment.contrast_factor.first, augment.contrast_factor.second}},
                  {"jpeg_quality", {augment.jpeg_quality.first, augment.jpeg_quality.second}}};
  j["networks"] = {{"resolution", networks.resolution},
                   {"pose_dim", networks.pose_dim},
                   {"identity_dim", networks.identity_dim},
                   {"pose_encoder_preset", networks.pose_encoder_preset},
                   {"identity_encoder_preset", networks.identity_encoder_preset},
                   {"encoder_width", networks.encoder_width},
                   {"mlp_hidden", networks.mlp_hidden},
                   {"base_channels", networks.base_channels},
                   {"disc_channels", networks.disc_channels},
                   {"num_videos", networks.num_videos}};
  const auto& w = losses.weights;
  j["losses"] = {{"weights",
                  {{"dice", w.dice},
                   {"content_generic", w.content_generic},
                   {"content_face", w.content_face},
                   {"adv", w.adv},
                   {"fm", w.fm},
                   {"emb", w.emb}}},
                 {"generic_layers", losses.generic_layers},
                 {"extractor_seed", losses.extractor_seed},
                 {"extractor_width", losses.extractor_width}};
  j["trainer"] = {{"batch_size", trainer.batch_size},
                  {"lr_g", trainer.lr_g},
                  {"lr_d", trainer.lr_d},
                  {"beta1", trainer.beta1},
                  {"beta2", trainer.beta2},
                  {"steps", trainer.steps},
                  {"log_every", trainer.log_every},
                  {"sample_every", trainer.sample_every},
                  {"checkpoint_every", trainer.checkpoint_every},
                  {"finetune_steps", trainer.finetune_steps},
                  {"finetune_frames", trainer.finetune_frames},
                  {"finetune_batch_size", trainer.finetune_batch_size}};
  j["evaluation"] = {{"queries_per_group", evaluation.queries_per_group},
                     {"topn", evaluation.topn},
                     {"probe_hidden", evaluation.probe_hidden},
                     {"probe_steps", evaluation.probe_steps},
                     {"probe_lr", evaluation.probe_lr}};
  return j;
}

RunConfig RunConfig::from_json(const nlohmann::json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  {
    auto s = root.sub("dataset");
    s.get("crop_growth", c.dataset.crop_growth);
    s.get("frame_stride", c.dataset.frame_stride);
    s.get("k", c.dataset.k);
    s.get("use_segmentation", c.dataset.use_segmentation);
    s.get("prefetch_capacity", c.dataset.prefetch_capacity);
    s.finish();
  }
  {
    auto s = root.sub("augment");
    auto& a = c.augment;
    s.get("enabled", a.enabled);
    s.get_range("scale_x", a.scale_x);
    s.get_range("scale_y", a.scale_y);
    s.get("p_blur", a.p_blur);
    s.get("p_sharpen", a.p_sharpen);
    s.get("p_contrast", a.p_contrast);
    s.get("p_jpeg", a.p_jpeg);
    s.get_range("blur_sigma", a.blur_sigma);
    s.get_range("sharpen_amount", a.sharpen_amount);
    s.get_range("contrast_factor", a.contrast_factor);
    std::vector<int> q{a.jpeg_quality.first, a.jpeg_quality.second};
    s.get("jpeg_quality", q);
    if (q.size() != 2) throw ConfigError("augment.jpeg_quality: expected [lo, hi]");
    a.jpeg_quality = {q[0], q[1]};
    s.finish();
  }
  {
    auto s = root.sub("networks");
    auto& n = c.networks;
    s.get("resolution", n.resolution);
    s.get("pose_dim", n.pose_dim);
    s.get("identity_dim", n.identity_dim);
    s.get("pose_encoder_preset", n.pose_encoder_preset);
    s.get("identity_encoder_preset", n.identity_encoder_preset);
    s.get("encoder_width", n.encoder_width);
    s.get("mlp_hidden", n.mlp_hidden);
    s.get("base_channels", n.base_channels);
    s.get("disc_channels", n.disc_channels);
    s.get("num_videos", n.num_videos);
    s.finish();
  }
  {
    auto s = root.sub("losses");
    auto w = s.sub("weights");
    auto& lw = c.losses.weights;
    w.get("dice", lw.dice);
    w.get("content_generic", lw.content_generic);
    w.get("content_face", lw.content_face);
    w.get("adv", lw.adv);
    w.get("fm", lw.fm);
    w.get("emb", lw.emb);
    w.finish();
    s.get("generic_layers", c.losses.generic_layers);
    s.get("extractor_seed", c.losses.extractor_seed);
    s.get("extractor_width", c.losses.extractor_width);
    s.finish();
  }
  {
    auto s = root.sub("trainer");
    auto& t = c.trainer;
    s.get("batch_size", t.batch_size);
    s.get("lr_g", t.lr_g);
    s.get("lr_d", t.lr_d);
    s.get("beta1", t.beta1);
    s.get("beta2", t.beta2);
    s.get("steps", t.steps);
    s.get("log_every", t.log_every);
    s.get("sample_every", t.sample_every);
    s.get("checkpoint_every", t.checkpoint_every);
    s.get("finetune_steps", t.finetune_steps);
    s.get("finetune_frames", t.finetune_frames);
    s.get("finetune_batch_size", t.finetune_batch_size);
    s.finish();
  }
  {
    auto s = root.sub("evaluation");
    auto& e = c.evaluation;
    s.get("queries_per_group", e.queries_per_group);
    s.get("topn", e.topn);
    s.get("probe_hidden", e.probe_hidden);
    s.get("probe_steps", e.probe_steps);
    s.get("probe_lr", e.probe_lr);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::dump() const { return to_json().dump(2) + "\n"; }

SamplerConfig RunConfig::sampler() const {
  SamplerConfig s;
  s.k = dataset.k;
  s.use_segmentation = dataset.use_segmentation;
  s.augment = augment;
  return s;
}

LossContext RunConfig::loss_context() const {
  LossContext ctx;
  ctx.weights = losses.weights;
  ctx.use_segmentation = dataset.use_segmentation;
  ctx.generic_extractor = std::make_shared<RandomConvExtractor>(losses.extractor_seed, losses.extractor_width);
  ctx.generic_layers = losses.generic_layers;
  return ctx;
}

}  // namespace lpr
