#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "lpr/config.hpp"
#include "lpr/evaluation.hpp"
#include "lpr/synthetic.hpp"
#include "lpr/trainer.hpp"

namespace lpr {

// --- frames on disk -------------------------------------------------------------

/// Loads the frames of a directory at the config's resolution. A video
/// directory (frames/, optional boxes.tsv) is cropped like training data; a
/// plain directory of PNG files is resized whole, in file-name order.
std::vector<torch::Tensor> load_frames(const std::filesystem::path& dir, const PreprocessConfig& pre, int limit = -1);

/// One image file resized whole to the target resolution.
torch::Tensor load_frame_file(const std::filesystem::path& file, int resolution);

// --- inference ------------------------------------------------------------------

/// Frozen networks of a checkpoint in evaluation mode.
class Reenactor {
 public:
  explicit Reenactor(const Checkpoint& checkpoint);
  static Reenactor load(const std::filesystem::path& path);

  const RunConfig& config() const { return state_.config(); }
  Networks& nets() { return state_.nets(); }
  /// x̄ stored by fine-tuning, if any.
  std::optional<torch::Tensor> stored_identity() const;

  torch::Tensor identity(const std::vector<torch::Tensor>& frames);  // d_i
  torch::Tensor pose(const torch::Tensor& frame);                    // d_p
  GeneratorOutput render(const torch::Tensor& identity, const torch::Tensor& pose);  // batch of one
  /// rgb over black using the mask, or the raw rgb when segmentation is off.
  torch::Tensor composite_image(const GeneratorOutput& out) const;

 private:
  TrainState state_;
};

/// T_k for the evaluation protocols: a checkpoint with a fixed identity.
class CheckpointModel : public ReenactmentModel {
 public:
  CheckpointModel(std::shared_ptr<Reenactor> reenactor, torch::Tensor identity);
  torch::Tensor reenact(const torch::Tensor& driver) override;

 private:
  std::shared_ptr<Reenactor> reenactor_;
  torch::Tensor identity_;
};

// --- plug-ins for the synthetic heads -------------------------------------------

/// Descriptor: measured skin colour relative to a mid-skin reference.
class SyntheticEmbedder : public FaceEmbedder {
 public:
  torch::Tensor embed(const torch::Tensor& image) override;
  int64_t dim() const override { return 3; }
};

/// Landmarks derived from the measured head geometry; eye centres are points 0 and 1.
class SyntheticDetector : public LandmarkDetector {
 public:
  torch::Tensor detect(const torch::Tensor& image) override;
  int64_t num_points() const override { return synthetic::kNumLandmarks; }
  std::pair<int64_t, int64_t> eye_indices() const override { return {synthetic::kLeftEye, synthetic::kRightEye}; }
};

std::unique_ptr<FaceEmbedder> make_embedder(const std::string& name);
std::unique_ptr<LandmarkDetector> make_detector(const std::string& name);

// --- commands ---------------------------------------------------------------------

struct ReenactResult {
  std::vector<std::filesystem::path> files;
};

ReenactResult run_reenact(const std::filesystem::path& ckpt, const std::filesystem::path& identity_dir,
                          const std::filesystem::path& driver_dir, const std::filesystem::path& out_dir);

/// Writes %05d_composite.png for `steps` points of the slerp path between the
/// pose embeddings of two frames.
std::vector<std::filesystem::path> run_interpolate(const std::filesystem::path& ckpt,
                                                   const std::filesystem::path& identity_dir,
                                                   const std::filesystem::path& frame_a,
                                                   const std::filesystem::path& frame_b, int steps,
                                                   const std::filesystem::path& out_dir);

struct ReenactmentReport {
  double identity_error = 0.0;
  PoseErrorResult pose;
  int subjects = 0;
};

inline constexpr int kEvalReferenceFrames = 32;
inline constexpr int kEvalHoldoutFrames = 32;

/// Pairs every <person>.ckpt in ckpt_dir with data_root/<person>: frames 0-31
/// are the references, frames 32-63 the hold-out set.
ReenactmentReport run_eval_reenactment(const std::filesystem::path& ckpt_dir, const std::filesystem::path& data_root,
                                       const std::string& embedder, const std::string& detector);
void write_reenactment_report(std::ostream& out, const ReenactmentReport& report);

std::vector<RetrievalCell> run_eval_retrieval(const std::filesystem::path& manifest, const std::vector<int>& topn,
                                              int queries, uint64_t seed);
void write_retrieval_report(std::ostream& out, const std::vector<RetrievalCell>& cells);

/// Pairs file rows: split (train|test), image path, then 2P normalised landmark coordinates.
struct ProbeFileRow {
  std::string split;
  std::filesystem::path image;
  std::vector<double> landmarks;
};
std::vector<ProbeFileRow> read_probe_pairs(const std::filesystem::path& file);
void write_probe_pairs(const std::filesystem::path& file, const std::vector<ProbeFileRow>& rows);

/// Pairs file for a synthetic dataset: cropped landmarks from pose.tsv, every
/// `test_every`-th frame goes to the test split.
void write_synthetic_probe_pairs(const std::filesystem::path& data_root, const PreprocessConfig& pre,
                                 const std::filesystem::path& file, int test_every = 5);

ProbeResult run_probe_keypoints(const std::filesystem::path& ckpt, const std::filesystem::path& pairs);

}  // namespace lpr
