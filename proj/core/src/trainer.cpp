#include "lpr/trainer.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "lpr/logging.hpp"
#include "lpr/image_io.hpp"

namespace fs = std::filesystem;

namespace lpr {
namespace {

constexpr const char* kNetPrefix = "net.";
constexpr const char* kPersonIdentity = "person.identity";
constexpr const char* kPersonEmbedding = "person.video_embedding";

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

std::string optim_key(bool d_side, const std::string& param, const char* field) {
  return fmt::format("optim.{}.{}.{}", d_side ? "d" : "g", param, field);
}

/// Restores buffers (batch-norm statistics, power-iteration vectors) on scope
/// exit unless released.
class BufferSnapshot {
 public:
  explicit BufferSnapshot(const Networks& nets) {
    for (const auto& [name, t] : nets.named_buffers()) saved_.emplace_back(t, t.clone());
  }
  ~BufferSnapshot() {
    if (released_) return;
    torch::NoGradGuard no_grad;
    for (auto& [live, copy] : saved_) live.copy_(copy);
  }
  void release() { released_ = true; }

 private:
  std::vector<std::pair<torch::Tensor, torch::Tensor>> saved_;
  bool released_ = false;
};

void check_finite(const LossReport& r) {
  for (size_t i = 0; i < r.names.size(); ++i) {
    if (!std::isfinite(r.values[i])) throw NonFiniteLossError(r.names[i]);
  }
}

double reconstruction_of(const LossReport& g) {
  double v = 0.0;
  for (size_t i = 0; i < g.names.size(); ++i) {
    if (g.names[i] == "dice" || g.names[i] == "content_generic" || g.names[i] == "content_face") {
      v += g.weights[i] * g.values[i];
    }
  }
  return v;
}

/// Accumulate both objectives, then one update per side.
StepReport joint_update(TrainState& state, const SideLosses& g, const SideLosses& d) {
  auto& og = state.generator_optimizer();
  auto& od = state.discriminator_optimizer();
  // Both objectives share the conditioning lookup, so the graph must survive the first pass.
  g.total.backward({}, /*retain_graph=*/true);
  // The generator objective also reaches discriminator weights; those
  // gradients belong to the other side and are discarded.
  od.zero_grad();
  d.total.backward();
  og.step();
  od.step();
  StepReport r;
  r.generator_side = g.report;
  r.discriminator_side = d.report;
  r.reconstruction = reconstruction_of(g.report);
  return r;
}

void write_metrics_header(std::ostream& out, const StepReport& r) {
  out << "step";
  for (const auto& n : r.generator_side.names) out << "\tg_" << n;
  out << "\tg_total";
  for (const auto& n : r.discriminator_side.names) out << '\t' << n;
  out << "\td_total\treconstruction\n";
}

void write_metrics_row(std::ostream& out, const StepReport& r) {
  out << r.iteration;
  for (double v : r.generator_side.values) out << '\t' << fmt::format("{:.6g}", v);
  out << '\t' << fmt::format("{:.6g}", r.generator_side.total);
  for (double v : r.discriminator_side.values) out << '\t' << fmt::format("{:.6g}", v);
  out << '\t' << fmt::format("{:.6g}", r.discriminator_side.total);
  out << '\t' << fmt::format("{:.6g}", r.reconstruction) << '\n';
  out.flush();
}

void dump_samples(Networks& nets, const Episode& ep, const fs::path& dir, int64_t step) {
  torch::NoGradGuard no_grad;
  nets.train(false);
  auto x = nets.encode_identity(ep.identity_frames.unsqueeze(0));
  auto y = nets.encode_pose(ep.pose_frame_raw.unsqueeze(0));
  auto out = nets.generate(x, y);
  const auto stem = fmt::format("step_{:07d}", step);
  save_rgb(dir / (stem + "_rgb.png"), out.rgb[0]);
  save_mask(dir / (stem + "_mask.png"), out.mask[0]);
  save_rgb(dir / (stem + "_composite.png"), composite(out.rgb[0], out.mask[0], true));
  save_rgb(dir / (stem + "_target.png"), ep.pose_frame_raw);
  save_mask(dir / (stem + "_target_mask.png"), ep.pose_mask);
  nets.train(true);
}

}  // namespace

TrainState::TrainState(RunConfig config) : config_(std::move(config)) {
  config_.validate();
  torch::manual_seed(config_.seed);
  nets_ = std::make_unique<Networks>(config_.networks);
  rng = Rng(mix_seed(config_.seed, 1));
  build_optimizers();
}

std::vector<std::pair<std::string, torch::Tensor>> TrainState::optimizer_params(bool d_side) const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (auto& [name, p] : nets_->named_parameters()) {
    const bool is_d = starts_with(name, "discriminator.");
    if (is_d != d_side) continue;
    if (!d_side && person_ && !starts_with(name, "adain_mlp.") && !starts_with(name, "generator.")) continue;
    out.emplace_back(name, p);
  }
  if (d_side && person_) out.emplace_back(kPersonEmbedding, person_embedding_param_);
  return out;
}

void TrainState::build_optimizers() {
  const auto& t = config_.trainer;
  auto params = [](const std::vector<std::pair<std::string, torch::Tensor>>& named) {
    std::vector<torch::Tensor> ps;
    for (const auto& [n, p] : named) ps.push_back(p);
    return ps;
  };
  opt_g_ = std::make_unique<torch::optim::Adam>(
      params(optimizer_params(false)), torch::optim::AdamOptions(t.lr_g).betas({t.beta1, t.beta2}));
  opt_d_ = std::make_unique<torch::optim::Adam>(
      params(optimizer_params(true)), torch::optim::AdamOptions(t.lr_d).betas({t.beta1, t.beta2}));
}

void TrainState::enter_person_mode(torch::Tensor identity, torch::Tensor video_embedding) {
  person_embedding_param_ = video_embedding.detach().clone().set_requires_grad(true);
  person_ = PersonSlot{identity.detach().clone(), person_embedding_param_};
  build_optimizers();
}

Checkpoint TrainState::to_checkpoint() const {
  Checkpoint c;
  c.config_json = config_.to_json().dump();
  c.iteration = iteration;
  c.rng_state = rng_to_string(rng);
  for (const auto& [name, t] : nets_->named_state()) c.tensors.emplace_back(kNetPrefix + name, t.detach().clone());
  if (person_) {
    c.tensors.emplace_back(kPersonIdentity, person_->identity.clone());
    c.tensors.emplace_back(kPersonEmbedding, person_embedding_param_.detach().clone());
  }
  for (bool d_side : {false, true}) {
    const auto& opt = d_side ? *opt_d_ : *opt_g_;
    for (const auto& [name, p] : optimizer_params(d_side)) {
      auto it = opt.state().find(p.unsafeGetTensorImpl());
      if (it == opt.state().end()) continue;
      const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
      c.tensors.emplace_back(optim_key(d_side, name, "step"), torch::tensor(st.step(), torch::kInt64));
      c.tensors.emplace_back(optim_key(d_side, name, "exp_avg"), st.exp_avg().clone());
      c.tensors.emplace_back(optim_key(d_side, name, "exp_avg_sq"), st.exp_avg_sq().clone());
    }
  }
  std::sort(c.tensors.begin(), c.tensors.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return c;
}

TrainState TrainState::from_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(ckpt.config_json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: corrupt config echo: ") + e.what());
  }
  TrainState st(RunConfig::from_json(j));
  {
    torch::NoGradGuard no_grad;
    for (auto& [name, t] : st.nets_->named_state()) {
      const auto& src = ckpt.at(kNetPrefix + name);
      if (src.sizes() != t.sizes()) throw Error("checkpoint: shape mismatch for " + name);
      t.copy_(src);
    }
  }
  if (const auto* id = ckpt.find(kPersonIdentity)) st.enter_person_mode(*id, ckpt.at(kPersonEmbedding));
  for (bool d_side : {false, true}) {
    auto& opt = d_side ? *st.opt_d_ : *st.opt_g_;
    for (const auto& [name, p] : st.optimizer_params(d_side)) {
      const auto* step = ckpt.find(optim_key(d_side, name, "step"));
      if (!step) continue;
      auto state = std::make_unique<torch::optim::AdamParamState>();
      state->step(step->item<int64_t>());
      state->exp_avg(ckpt.at(optim_key(d_side, name, "exp_avg")).clone());
      state->exp_avg_sq(ckpt.at(optim_key(d_side, name, "exp_avg_sq")).clone());
      opt.state()[p.unsafeGetTensorImpl()] = std::move(state);
    }
  }
  st.iteration = ckpt.iteration;
  st.rng = rng_from_string(ckpt.rng_state);
  return st;
}

StepReport meta_train_step(TrainState& state, const std::vector<Episode>& batch, const LossContext& ctx) {
  if (batch.empty()) throw std::invalid_argument("meta_train_step: empty batch");
  auto& nets = state.nets();
  nets.train(true);
  BufferSnapshot snapshot(nets);
  state.generator_optimizer().zero_grad();
  state.discriminator_optimizer().zero_grad();

  auto losses = total_losses(stack_episodes(batch), nets, ctx);
  check_finite(losses.generator_side.report);
  check_finite(losses.discriminator_side.report);
  snapshot.release();

  auto report = joint_update(state, losses.generator_side, losses.discriminator_side);
  report.iteration = ++state.iteration;
  return report;
}

TrainState train(const RunConfig& config, const TrainOptions& options) {
  auto manifest = DatasetManifest::scan(options.data_root, config.dataset.frame_stride);
  if (manifest.empty()) throw Error("no videos found under " + options.data_root.string());

  std::unique_ptr<TrainState> state;
  if (options.resume) {
    state = std::make_unique<TrainState>(TrainState::from_checkpoint(Checkpoint::load(*options.resume)));
    if (state->config().networks.num_videos != static_cast<int>(manifest.entries.size())) {
      throw ConfigError("resume: checkpoint was trained on a different number of videos");
    }
  } else {
    RunConfig cfg = config;
    cfg.networks.num_videos = static_cast<int>(manifest.entries.size());
    state = std::make_unique<TrainState>(cfg);
  }
  const auto& cfg = state->config();
  auto ctx = cfg.loss_context();
  ctx.validate();
  for (const auto& w : state->nets().warnings()) logging::warn(w);

  FrameStore store(manifest, cfg.preprocess(), cfg.dataset.use_segmentation);

  fs::create_directories(options.run_dir / "checkpoints");
  fs::create_directories(options.run_dir / "samples");
  fs::create_directories(options.run_dir / "logs");
  {
    std::ofstream out(options.run_dir / "config.resolved");
    out << cfg.dump();
  }
  const auto metrics_path = options.run_dir / "logs" / "metrics.tsv";
  const bool fresh_metrics = !options.resume || !fs::exists(metrics_path);
  std::ofstream metrics(metrics_path, fresh_metrics ? std::ios::trunc : std::ios::app);

  EpisodePrefetcher prefetcher(store, cfg.sampler(), state->rng, cfg.dataset.prefetch_capacity, options.workers);
  const int64_t total_steps = config.trainer.steps;
  bool header_written = !fresh_metrics;
  while (state->iteration < total_steps) {
    std::vector<Episode> batch;
    for (int b = 0; b < cfg.trainer.batch_size; ++b) {
      batch.push_back(prefetcher.next());
      state->rng();  // keep the stored stream aligned with the prefetcher's copy
    }
    StepReport report;
    try {
      report = meta_train_step(*state, batch, ctx);
    } catch (const NonFiniteLossError& e) {
      logging::error(fmt::format("step {} aborted: {}", state->iteration + 1, e.what()));
      throw;
    }
    if (options.on_step) options.on_step(report);
    const auto it = report.iteration;
    if (!header_written) {
      write_metrics_header(metrics, report);
      header_written = true;
    }
    if (it == 1 || it % cfg.trainer.log_every == 0) {
      write_metrics_row(metrics, report);
      logging::info(fmt::format("step {}: g_total {:.4f} d_total {:.4f} reconstruction {:.4f}", it,
                   report.generator_side.total, report.discriminator_side.total, report.reconstruction));
    }
    if (it % cfg.trainer.sample_every == 0) dump_samples(state->nets(), batch.front(), options.run_dir / "samples", it);
    if (it % cfg.trainer.checkpoint_every == 0) {
      state->to_checkpoint().save(options.run_dir / "checkpoints" / fmt::format("step_{:07d}.ckpt", it));
    }
  }
  state->to_checkpoint().save(options.run_dir / "checkpoints" / "final.ckpt");
  return std::move(*state);
}

Checkpoint finetune(const Checkpoint& checkpoint, const FinetuneSpec& spec) {
  auto state = TrainState::from_checkpoint(checkpoint);
  const auto cfg = state.config();
  if (!spec.frames.defined() || spec.frames.dim() != 4 || spec.frames.size(0) < 1) {
    throw std::invalid_argument("finetune: at least one frame is required");
  }
  if (spec.frames.size(0) > 32) throw std::invalid_argument("finetune: at most 32 frames");
  if (cfg.dataset.use_segmentation && !spec.masks) {
    throw ConfigError("finetune: segmentation is on but no masks were provided");
  }
  if (spec.steps < 0) throw std::invalid_argument("finetune: negative step count");
  auto& nets = state.nets();
  const auto n = spec.frames.size(0);
  const auto masks = spec.masks ? *spec.masks : torch::ones({n, 1, spec.frames.size(2), spec.frames.size(3)});

  torch::Tensor identity, projected;
  {
    torch::NoGradGuard no_grad;
    nets.train(false);
    identity = nets.encode_identity(spec.frames);
    projected = nets.identity_projection(identity);
  }
  state.enter_person_mode(identity, projected);
  auto ctx = cfg.loss_context();
  ctx.validate();
  Rng rng(mix_seed(spec.seed, 0xf1e7));
  const int batch = std::min<int>(cfg.trainer.finetune_batch_size, static_cast<int>(n));

  for (int step = 0; step < spec.steps; ++step) {
    nets.mlp->train();
    nets.generator->train();
    nets.discriminator->train();
    state.generator_optimizer().zero_grad();
    state.discriminator_optimizer().zero_grad();

    auto positions = draw_frame_positions(static_cast<int>(n), batch, rng);
    std::vector<int64_t> idx(positions.begin(), positions.end());
    auto index = torch::tensor(idx, torch::kLong);
    torch::Tensor pose;
    {
      torch::NoGradGuard no_grad;
      std::vector<torch::Tensor> augmented;
      for (auto i : idx) augmented.push_back(pose_augment(spec.frames[i], cfg.augment, rng));
      pose = nets.encode_pose(torch::stack(augmented));
    }
    GeneratorLossInputs in;
    in.output = nets.generate(identity.unsqueeze(0).expand({batch, -1}), pose);
    in.target_rgb = spec.frames.index_select(0, index);
    in.target_mask = masks.index_select(0, index);
    in.projected_identity = projected.unsqueeze(0).expand({batch, -1});
    in.video_embedding = state.person_embedding().unsqueeze(0).expand({batch, -1});
    auto [g, d] = losses_from_outputs(in, nets.discriminator, ctx);
    check_finite(g.report);
    check_finite(d.report);
    auto report = joint_update(state, g, d);
    report.iteration = step + 1;
    if (spec.on_step) spec.on_step(step + 1, report);
  }
  nets.train(false);
  return state.to_checkpoint();
}

FinetuneSpec load_finetune_frames(const fs::path& person_dir, const RunConfig& config, int limit) {
  fs::path video_dir = person_dir;
  if (!fs::is_directory(video_dir / "frames")) {
    // person directory: use its first video
    std::vector<fs::path> videos;
    for (const auto& e : fs::directory_iterator(person_dir)) {
      if (e.is_directory() && fs::is_directory(e.path() / "frames")) videos.push_back(e.path());
    }
    if (videos.empty()) throw Error("no video directory under " + person_dir.string());
    std::sort(videos.begin(), videos.end());
    video_dir = videos.front();
  }
  auto manifest = DatasetManifest::scan_video(video_dir, 1);
  if (manifest.empty()) throw Error("no frames in " + video_dir.string());
  const auto& entry = manifest.entries.front();
  const int count = std::min(limit, entry.frame_count());
  std::vector<torch::Tensor> frames, masks;
  bool all_masks = true;
  for (int p = 0; p < count; ++p) {
    auto rec = load_frame(entry, p, config.preprocess(), true);
    frames.push_back(rec.image);
    if (rec.mask) {
      masks.push_back(*rec.mask);
    } else {
      all_masks = false;
    }
  }
  FinetuneSpec spec;
  spec.frames = torch::stack(frames);
  if (all_masks && !masks.empty()) spec.masks = torch::stack(masks);
  spec.steps = config.trainer.finetune_steps;
  spec.seed = config.seed;
  return spec;
}

}  // namespace lpr
