#pragma once

#include <condition_variable>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <torch/torch.h>

#include "lpr/augment.hpp"
#include "lpr/common.hpp"

namespace lpr {

// ---------------------------------------------------------------------------
// Crop geometry
// ---------------------------------------------------------------------------

/// Half-open pixel box [x0, x1) x [y0, y1).
struct CropBox {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  int width() const { return x1 - x0; }
  int height() const { return y1 - y0; }
  bool operator==(const CropBox&) const = default;
};

/// Squares the box by enlarging its smaller side about the centre, then
/// scales both sides by (1 + growth). The result may leave the image.
CropBox grow_crop_box(const CropBox& box, double growth);

/// One axis of a separable affine resampling: output index u reads source
/// coordinate clamp(offset + step * u, lo, hi).
struct AxisMap {
  double offset;
  double step;
  double lo;
  double hi;
};

/// Bilinear resampling of a CxHxW tensor; samples outside the source read pad_value.
torch::Tensor resample_bilinear(const torch::Tensor& image, const AxisMap& mx, const AxisMap& my,
                                int64_t out_w, int64_t out_h, float pad_value);

struct CropResult {
  torch::Tensor image;
  bool fully_outside = false;  // box did not intersect the image; output is all padding
};

/// Crops `box` out of a CxHxW image (zero/pad outside the image) and resizes
/// it bilinearly to out_resolution x out_resolution.
CropResult crop_frame(const torch::Tensor& image, const CropBox& box, int out_resolution,
                      float pad_value = -1.0f);

// ---------------------------------------------------------------------------
// Records and manifest
// ---------------------------------------------------------------------------

struct FrameRecord {
  std::string person_id;
  std::string video_id;
  int frame_index = 0;
  torch::Tensor image;                // 3xRxR in [-1, 1]
  std::optional<torch::Tensor> mask;  // 1xRxR in [0, 1]
};

struct VideoEntry {
  std::string person_id;
  std::string video_id;
  std::filesystem::path dir;
  std::vector<int> frames;  // frame indices after stride subsampling
  std::map<int, CropBox> boxes;
  std::vector<bool> has_mask;  // parallel to frames

  int frame_count() const { return static_cast<int>(frames.size()); }
};

/// Directory layout:
///   root/<person>/<video>/frames/%05d.png
///   root/<person>/<video>/masks/%05d.png     (optional)
///   root/<person>/<video>/boxes.tsv          (optional; frame x0 y0 x1 y1)
struct DatasetManifest {
  std::filesystem::path root;
  std::vector<VideoEntry> entries;
  int stride = 25;

  static DatasetManifest scan(const std::filesystem::path& root, int stride = 25);
  /// Single video directory (frames/, masks/, boxes.tsv) as a one-entry manifest.
  static DatasetManifest scan_video(const std::filesystem::path& video_dir, int stride = 1);
  bool empty() const { return entries.empty(); }
};

std::filesystem::path frame_path(const std::filesystem::path& video_dir, int index);
std::filesystem::path mask_path(const std::filesystem::path& video_dir, int index);
std::map<int, CropBox> read_boxes(const std::filesystem::path& tsv);
void write_boxes(const std::filesystem::path& tsv, const std::map<int, CropBox>& boxes);

struct PreprocessConfig {
  int resolution = 256;
  double crop_growth = 0.8;
};

/// Loads one frame, applies the box crop (grown) and resizes to the target
/// resolution. Frames without a box use the full image.
FrameRecord load_frame(const VideoEntry& video, int position, const PreprocessConfig& pre, bool load_mask);

/// Immutable preprocessed frame cache over a manifest.
class FrameStore {
 public:
  FrameStore(DatasetManifest manifest, PreprocessConfig pre, bool load_masks);

  const DatasetManifest& manifest() const { return manifest_; }
  const PreprocessConfig& preprocess() const { return pre_; }
  int num_videos() const { return static_cast<int>(manifest_.entries.size()); }
  const FrameRecord& frame(int video, int position) const;

 private:
  DatasetManifest manifest_;
  PreprocessConfig pre_;
  std::vector<std::vector<FrameRecord>> frames_;
};

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct Episode {
  torch::Tensor identity_frames;       // K x 3 x R x R
  torch::Tensor pose_frame_raw;        // 3 x R x R
  torch::Tensor pose_frame_augmented;  // 3 x R x R
  torch::Tensor pose_mask;             // 1 x R x R (ones when segmentation is off)
  int video_index = 0;
  std::string person_id;
  std::string video_id;
  std::vector<int> frame_indices;  // K identity frames, then the pose frame
};

struct SamplerConfig {
  int k = 8;
  bool use_segmentation = true;
  AugmentConfig augment;
  int max_resample = 64;
};

/// Draws K+1 distinct positions out of n (with replacement when n < K+1).
std::vector<int> draw_frame_positions(int n, int count, Rng& rng);

/// sample_episode: uniform video, K+1 frames, augmented pose source.
Episode sample_episode(const FrameStore& store, const SamplerConfig& config, Rng& rng);

/// Stacked episodes for a training step.
struct EpisodeBatch {
  torch::Tensor identity_frames;  // B x K x 3 x R x R
  torch::Tensor pose_raw;         // B x 3 x R x R
  torch::Tensor pose_augmented;   // B x 3 x R x R
  torch::Tensor pose_mask;        // B x 1 x R x R
  torch::Tensor video_index;      // B (int64)
};

EpisodeBatch stack_episodes(const std::vector<Episode>& episodes);

/// Bounded, order-preserving episode prefetch queue.
///
/// Episode i is sampled from an engine seeded with the i-th draw of `seeds`,
/// so the delivered sequence is independent of the worker count.
class EpisodePrefetcher {
 public:
  EpisodePrefetcher(const FrameStore& store, SamplerConfig config, Rng seeds, int capacity, int workers);
  ~EpisodePrefetcher();
  EpisodePrefetcher(const EpisodePrefetcher&) = delete;
  EpisodePrefetcher& operator=(const EpisodePrefetcher&) = delete;

  Episode next();

 private:
  void work(std::stop_token stop);

  const FrameStore& store_;
  SamplerConfig config_;
  Rng seeds_;
  int capacity_;
  std::mutex mu_;
  std::condition_variable_any ready_;
  std::condition_variable_any space_;
  std::map<uint64_t, Episode> done_;
  uint64_t next_claim_ = 0;
  uint64_t next_out_ = 0;
  std::exception_ptr error_;
  std::vector<std::jthread> threads_;
};

}  // namespace lpr
