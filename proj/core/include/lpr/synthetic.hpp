#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include <torch/torch.h>

#include "lpr/common.hpp"
#include "lpr/dataset.hpp"

namespace lpr::synthetic {

// Procedural "heads": a skin-coloured ellipse with two white eyes and a dark
// red mouth over a cool, per-frame gradient background. Colours are in [0, 1].

using Color = std::array<double, 3>;

struct HeadIdentity {
  Color skin{};
  double semi_x = 22.0;  // head semi-axes in raw-frame pixels
  double semi_y = 28.0;
  Color background{};
};

struct HeadPose {
  double angle_deg = 0.0;  // in-plane rotation, [-30, 30]
  double eye_open = 1.0;   // [0.15, 1]
  double mouth_open = 0.0; // [0, 1]
};

/// Placement of a head in pixel coordinates (continuous, pixel centres at +0.5).
struct HeadGeometry {
  double cx = 0.0;
  double cy = 0.0;
  double semi_x = 0.0;
  double semi_y = 0.0;
  HeadPose pose;
};

inline constexpr double kEyeOffsetX = 0.42;
inline constexpr double kEyeOffsetY = -0.25;
inline constexpr double kEyeSemiX = 0.28;
inline constexpr double kEyeSemiY = 0.2;
inline constexpr double kMouthOffsetY = 0.45;
inline constexpr double kMouthSemiX = 0.42;
inline constexpr double kMouthBase = 0.06;
inline constexpr double kMouthRange = 0.3;
inline constexpr double kMaxAngleDeg = 30.0;
inline constexpr double kMinEyeOpen = 0.15;
inline constexpr Color kEyeColor{1.0, 1.0, 1.0};
inline constexpr Color kMouthColor{0.45, 0.05, 0.1};

HeadIdentity random_identity(Rng& rng, int raw_size);
HeadPose random_pose(Rng& rng);

struct Rendered {
  torch::Tensor rgb;   // 3 x H x W in [0, 1]
  torch::Tensor mask;  // 1 x H x W, exactly the head region
  CropBox box;         // unrotated head bounding box
};

/// Point-sampled rendering. `gradient` is the background gradient direction
/// (unit vector scaled by its amplitude).
Rendered render(const HeadIdentity& identity, const HeadGeometry& geometry, int raw_size,
                std::array<double, 2> gradient);

// --- landmarks --------------------------------------------------------------

/// Landmark order: left eye centre, right eye centre, left eye top, right eye
/// top, mouth top, mouth bottom, head top. Eye centres are points 0 and 1.
inline constexpr int kNumLandmarks = 7;
inline constexpr int kLeftEye = 0;
inline constexpr int kRightEye = 1;

std::vector<std::array<double, 2>> landmarks(const HeadGeometry& g);
/// Closed-form inverse of landmarks().
HeadGeometry geometry_from_landmarks(const std::vector<std::array<double, 2>>& points);

// --- image analysis ---------------------------------------------------------

enum class PixelClass : uint8_t { background, skin, eye, mouth };
PixelClass classify(const Color& c);

struct Analysis {
  bool valid = false;  // head found
  HeadGeometry geometry;
  Color skin{};          // mean skin colour
  double head_fraction = 0.0;
};

/// Measures head placement, pose parameters and skin colour of an image
/// (3 x H x W, values in [-1, 1]).
Analysis analyze(const torch::Tensor& image);

/// Normalised pose distance: angle / 60 deg, eye openness / 0.85, mouth / 1.
double pose_distance(const HeadPose& a, const HeadPose& b);
double color_distance(const Color& a, const Color& b);

// --- dataset ------------------------------------------------------------------

struct DatasetOptions {
  int identities = 6;
  int videos_per_identity = 1;
  int frames_per_video = 64;
  int raw_size = 128;
  uint64_t seed = 0;
  bool force = false;
};

struct FrameTruth {
  int frame = 0;
  HeadGeometry geometry;
};

/// Writes root/idNNN/vidNN/{frames,masks}/%05d.png, boxes.tsv, pose.tsv and
/// root/idNNN/identity.tsv. Refuses a nonempty root unless force is set.
void make_dataset(const std::filesystem::path& root, const DatasetOptions& options);

std::vector<FrameTruth> read_pose_tsv(const std::filesystem::path& tsv);
void write_pose_tsv(const std::filesystem::path& tsv, const std::vector<FrameTruth>& rows);
HeadIdentity read_identity_tsv(const std::filesystem::path& tsv);
void write_identity_tsv(const std::filesystem::path& tsv, const HeadIdentity& id);

}  // namespace lpr::synthetic
