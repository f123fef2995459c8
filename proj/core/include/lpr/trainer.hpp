#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "lpr/checkpoint.hpp"
#include "lpr/config.hpp"
#include "lpr/dataset.hpp"
#include "lpr/losses.hpp"
#include "lpr/networks.hpp"

namespace lpr {

/// Person-specific slot written by fine-tuning.
struct PersonSlot {
  torch::Tensor identity;         // frozen x̄, d_i
  torch::Tensor video_embedding;  // discriminator conditioning, Cf
};

/// Networks, optimiser state, iteration counter and sampling stream.
///
/// In meta mode the generator-side optimiser covers F, G, the MLP, the
/// generator and the identity projection; after fine-tuning it covers only
/// the MLP and the generator, and the discriminator side additionally owns
/// the person's conditioning embedding.
class TrainState {
 public:
  explicit TrainState(RunConfig config);

  static TrainState from_checkpoint(const Checkpoint& ckpt);
  Checkpoint to_checkpoint() const;

  const RunConfig& config() const { return config_; }
  Networks& nets() { return *nets_; }
  const Networks& nets() const { return *nets_; }
  bool finetuned() const { return person_.has_value(); }
  const std::optional<PersonSlot>& person() const { return person_; }

  /// Switches to person-specific mode: freezes x̄ and rebuilds the optimisers
  /// over the fine-tuned parameter sets.
  void enter_person_mode(torch::Tensor identity, torch::Tensor video_embedding);
  /// The trainable conditioning vector in person mode (undefined otherwise).
  const torch::Tensor& person_embedding() const { return person_embedding_param_; }

  torch::optim::Adam& generator_optimizer() { return *opt_g_; }
  torch::optim::Adam& discriminator_optimizer() { return *opt_d_; }
  /// Trainable tensors of one side, by checkpoint name, sorted.
  std::vector<std::pair<std::string, torch::Tensor>> optimizer_params(bool discriminator_side) const;

  int64_t iteration = 0;
  Rng rng;

 private:
  void build_optimizers();

  RunConfig config_;
  std::unique_ptr<Networks> nets_;
  std::optional<PersonSlot> person_;
  torch::Tensor person_embedding_param_;
  std::unique_ptr<torch::optim::Adam> opt_g_;
  std::unique_ptr<torch::optim::Adam> opt_d_;
};

struct StepReport {
  int64_t iteration = 0;  // value after the step
  LossReport generator_side;
  LossReport discriminator_side;
  /// dice + content terms: the masked reconstruction part of the objective.
  double reconstruction = 0.0;
};

/// One meta-learning step: all loss terms are accumulated and every network
/// receives exactly one optimiser update. Non-finite losses abort the step
/// with the state unchanged and NonFiniteLossError naming the term.
StepReport meta_train_step(TrainState& state, const std::vector<Episode>& batch, const LossContext& ctx);

struct TrainOptions {
  std::filesystem::path data_root;
  std::filesystem::path run_dir;
  std::optional<std::filesystem::path> resume;
  std::function<void(const StepReport&)> on_step;
  int workers = 0;  // prefetch threads; 0 samples inline
};

/// Full training run; writes config.resolved, logs/metrics.tsv, samples/ and
/// checkpoints/ (step_XXXXXXX.ckpt and final.ckpt) under run_dir.
TrainState train(const RunConfig& config, const TrainOptions& options);

struct FinetuneSpec {
  torch::Tensor frames;               // N x 3 x R x R, N <= 32
  std::optional<torch::Tensor> masks;  // N x 1 x R x R
  int steps = 600;
  uint64_t seed = 0;
  std::function<void(int step, const StepReport&)> on_step;
};

/// Person-specific fine-tuning of the MLP, generator and discriminator with
/// the pose encoder and x̄ frozen.
Checkpoint finetune(const Checkpoint& checkpoint, const FinetuneSpec& spec);

/// Frames of a person directory prepared for fine-tuning (first `limit` frames).
FinetuneSpec load_finetune_frames(const std::filesystem::path& person_dir, const RunConfig& config, int limit);

}  // namespace lpr
