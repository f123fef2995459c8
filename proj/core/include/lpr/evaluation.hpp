#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "lpr/common.hpp"

namespace lpr {

// --- plug-ins -------------------------------------------------------------------

/// Identity descriptor of an image (3 x H x W in [-1, 1]). Deterministic, fixed dimension.
class FaceEmbedder {
 public:
  virtual ~FaceEmbedder() = default;
  virtual torch::Tensor embed(const torch::Tensor& image) = 0;  // D, float64
  virtual int64_t dim() const = 0;
};

/// Landmarks of an image as a P x 2 float64 tensor of (x, y) pixel positions.
class LandmarkDetector {
 public:
  virtual ~LandmarkDetector() = default;
  virtual torch::Tensor detect(const torch::Tensor& image) = 0;
  virtual int64_t num_points() const = 0;
  /// Indices of the two points whose distance is the inter-ocular distance.
  virtual std::pair<int64_t, int64_t> eye_indices() const = 0;
};

/// A person-specific model T_k: renders its person in the pose of a driver frame.
class ReenactmentModel {
 public:
  virtual ~ReenactmentModel() = default;
  virtual torch::Tensor reenact(const torch::Tensor& driver) = 0;
};

struct ReenactmentSubject {
  std::shared_ptr<ReenactmentModel> model;
  std::vector<torch::Tensor> reference_frames;  // fine-tuning frames of this person
  std::vector<torch::Tensor> holdout_frames;    // disjoint frames of the same person
};

// --- reenactment metrics ------------------------------------------------------

inline constexpr double kCosineEps = 1e-12;

double cosine_similarity(const torch::Tensor& a, const torch::Tensor& b);

/// Sum that is independent of accumulation order up to rounding of the pairs.
double pairwise_sum(const std::vector<double>& values);

/// Mean of 1 - csim(outputs[k][i][j], refs[k]) over all k, i != k, j.
/// outputs[k][i] holds the descriptors of model k driven by person i's frames;
/// outputs[k][k] is ignored.
double identity_error_from_descriptors(const std::vector<torch::Tensor>& refs,
                                       const std::vector<std::vector<std::vector<torch::Tensor>>>& outputs);

/// Cross-person identity error; r_k is the mean descriptor of person k's reference frames.
double identity_error(const std::vector<ReenactmentSubject>& subjects, FaceEmbedder& embedder);

struct PoseErrorResult {
  double value = 0.0;
  int64_t evaluated = 0;
  int64_t skipped = 0;  // frames whose reference inter-ocular distance was zero
};

/// Mean point distance between two landmark sets divided by the reference
/// inter-ocular distance; nullopt when that distance is zero.
std::optional<double> normalized_landmark_distance(const torch::Tensor& predicted, const torch::Tensor& reference,
                                                   std::pair<int64_t, int64_t> eyes);

/// Self-reenactment landmark error over each subject's hold-out frames.
PoseErrorResult pose_error(const std::vector<ReenactmentSubject>& subjects, LandmarkDetector& detector);

// --- retrieval ------------------------------------------------------------------

struct RetrievalItem {
  std::vector<double> descriptor;
  std::string label;
  std::string group;
};

struct RetrievalManifest {
  std::vector<RetrievalItem> items;

  /// Item indices by group, groups in sorted order.
  std::map<std::string, std::vector<size_t>> groups() const;
  /// TSV rows: group, label, then descriptor values (tab separated). A header line starting with '#' is skipped.
  static RetrievalManifest load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct RetrievalCell {
  int n = 0;
  double accuracy = 0.0;
  int64_t matches = 0;
  int64_t retrieved = 0;
  std::vector<std::string> skipped_groups;  // groups with fewer than n + 1 items
};

/// For every group, queries_per_group random queries rank the other items of
/// the group by cosine similarity; accuracy is the fraction of the top n that
/// share the query's label.
std::vector<RetrievalCell> retrieval_accuracy(const RetrievalManifest& manifest, const std::vector<int>& topn,
                                              int queries_per_group, Rng& rng);

/// Expected accuracy of a random ranking: per group, the mean over queries of
/// (same-label items - 1) / (group size - 1).
double retrieval_chance_level(const RetrievalManifest& manifest, int n);

// --- keypoint probe -------------------------------------------------------------

struct ProbePair {
  torch::Tensor features;   // D (pose and identity embeddings concatenated)
  torch::Tensor landmarks;  // P x 2, normalised image coordinates
};

struct ProbeConfig {
  int hidden = 768;
  int steps = 3000;
  double lr = 1e-3;
  uint64_t seed = 0;
  std::pair<int64_t, int64_t> eye_indices{0, 1};
};

struct ProbeResult {
  double test_error = 0.0;   // mean inter-ocular-normalised point distance
  double train_error = 0.0;
  int64_t skipped = 0;       // test pairs with zero inter-ocular distance
};

inline constexpr int kMinProbePairs = 10;

/// Fits a one-hidden-layer ReLU MLP from features to landmarks and reports the test error.
ProbeResult keypoint_probe(const std::vector<ProbePair>& train, const std::vector<ProbePair>& test,
                           const ProbeConfig& config);

// --- pose interpolation -------------------------------------------------------

inline constexpr double kSlerpMinAngle = 1e-4;

/// Spherical interpolation between two nonzero pose embeddings; linear when
/// they are (anti)collinear within 1e-4 rad.
torch::Tensor interpolate_pose(const torch::Tensor& y1, const torch::Tensor& y2, double t);

}  // namespace lpr
