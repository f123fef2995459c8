#include <gtest/gtest.h>

#include <cmath>

#include "lpr/dataset.hpp"
#include "lpr/image_io.hpp"
#include "lpr/synthetic.hpp"
#include "support.hpp"

using namespace lpr;
using namespace lpr::synthetic;
namespace fs = std::filesystem;

namespace {

HeadGeometry random_geometry(Rng& rng) {
  HeadGeometry g;
  g.cx = uniform(rng, 40, 90);
  g.cy = uniform(rng, 40, 90);
  g.semi_x = uniform(rng, 18, 26);
  g.semi_y = g.semi_x * uniform(rng, 1.2, 1.35);
  g.pose = random_pose(rng);
  return g;
}

void expect_geometry_near(const HeadGeometry& a, const HeadGeometry& b, double tol) {
  EXPECT_NEAR(a.cx, b.cx, tol);
  EXPECT_NEAR(a.cy, b.cy, tol);
  EXPECT_NEAR(a.semi_x, b.semi_x, tol);
  EXPECT_NEAR(a.semi_y, b.semi_y, tol);
  EXPECT_NEAR(a.pose.angle_deg, b.pose.angle_deg, tol);
  EXPECT_NEAR(a.pose.eye_open, b.pose.eye_open, tol);
  EXPECT_NEAR(a.pose.mouth_open, b.pose.mouth_open, tol);
}

DatasetOptions small_options(uint64_t seed) {
  DatasetOptions o;
  o.identities = 2;
  o.frames_per_video = 5;
  o.raw_size = 64;
  o.seed = seed;
  return o;
}

}  // namespace

TEST(Landmarks, ClosedFormInverse) {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto g = random_geometry(rng);
    const auto pts = landmarks(g);
    ASSERT_EQ(pts.size(), static_cast<size_t>(kNumLandmarks));
    expect_geometry_near(geometry_from_landmarks(pts), g, 1e-9);
  }
}

TEST(Landmarks, UprightEyeCentres) {
  HeadGeometry g{50, 60, 20, 25, {}};
  const auto pts = landmarks(g);
  EXPECT_NEAR(pts[kLeftEye][0], 50 - kEyeOffsetX * 20, 1e-12);
  EXPECT_NEAR(pts[kRightEye][0], 50 + kEyeOffsetX * 20, 1e-12);
  EXPECT_NEAR(pts[kLeftEye][1], 60 + kEyeOffsetY * 25, 1e-12);
}

TEST(PoseDistance, Normalisation) {
  HeadPose a, b;
  b.angle_deg = 30;
  EXPECT_NEAR(pose_distance(a, b), 0.5, 1e-12);
  EXPECT_EQ(pose_distance(a, a), 0.0);
  EXPECT_NEAR(color_distance({0, 0, 0}, {0.3, 0.4, 0}), 0.5, 1e-12);
}

TEST(Render, MaskIsExactlyTheNonBackgroundPixels) {
  Rng rng(2);
  for (int i = 0; i < 10; ++i) {
    const auto id = random_identity(rng, 128);
    HeadGeometry g{64 + uniform(rng, -4, 4), 64 + uniform(rng, -4, 4), id.semi_x, id.semi_y, random_pose(rng)};
    const auto r = render(id, g, 128, {0.1, -0.05});
    auto rgb = r.rgb.permute({1, 2, 0}).contiguous();
    auto acc = rgb.accessor<float, 3>();
    auto m = r.mask.accessor<float, 3>();
    int64_t mismatches = 0;
    for (int y = 0; y < 128; ++y) {
      for (int x = 0; x < 128; ++x) {
        const bool head = classify({acc[y][x][0], acc[y][x][1], acc[y][x][2]}) != PixelClass::background;
        mismatches += head != (m[0][y][x] > 0.5f);
      }
    }
    EXPECT_EQ(mismatches, 0);
  }
}

TEST(Analyze, RecoversRenderedPose) {
  Rng rng(3);
  for (int i = 0; i < 30; ++i) {
    const auto id = random_identity(rng, 128);
    HeadGeometry g{64, 64, id.semi_x, id.semi_y, random_pose(rng)};
    const auto r = render(id, g, 128, {0.0, 0.1});
    const auto a = analyze(r.rgb * 2 - 1);
    ASSERT_TRUE(a.valid);
    EXPECT_NEAR(a.geometry.pose.angle_deg, g.pose.angle_deg, 2.0);
    EXPECT_NEAR(a.geometry.pose.eye_open, g.pose.eye_open, 0.12);
    EXPECT_NEAR(a.geometry.pose.mouth_open, g.pose.mouth_open, 0.12);
    EXPECT_LT(color_distance(a.skin, id.skin), 0.02);
    EXPECT_LT(pose_distance(a.geometry.pose, g.pose), 0.15);
  }
}

TEST(Analyze, EmptyImageIsInvalid) {
  EXPECT_FALSE(analyze(-torch::ones({3, 32, 32})).valid);
}

TEST(Dataset, LayoutMasksAndPoseTable) {
  test::TempDir dir("syn");
  make_dataset(dir.path(), small_options(4));
  const auto video = dir / "id001/vid00";
  EXPECT_TRUE(fs::exists(video / "frames/00004.png"));
  EXPECT_TRUE(fs::exists(video / "boxes.tsv"));
  const auto rows = read_pose_tsv(video / "pose.tsv");
  ASSERT_EQ(rows.size(), 5u);
  for (const auto& row : rows) {
    expect_geometry_near(geometry_from_landmarks(landmarks(row.geometry)), row.geometry, 1e-9);
    auto frame = load_rgb(frame_path(video, row.frame));
    auto mask = load_mask(mask_path(video, row.frame));
    auto rgb = ((frame + 1) / 2).permute({1, 2, 0}).contiguous();
    auto acc = rgb.accessor<float, 3>();
    auto m = mask.accessor<float, 3>();
    for (int64_t y = 0; y < rgb.size(0); ++y) {
      for (int64_t x = 0; x < rgb.size(1); ++x) {
        const bool head = classify({acc[y][x][0], acc[y][x][1], acc[y][x][2]}) != PixelClass::background;
        ASSERT_EQ(head, m[0][y][x] > 0.5f) << row.frame << " " << x << "," << y;
      }
    }
  }
  const auto id = read_identity_tsv(video / "identity.tsv");
  EXPECT_GT(id.semi_y, id.semi_x);
}

TEST(Dataset, FixedSeedGivesIdenticalBytes) {
  test::TempDir a("syn_a"), b("syn_b");
  make_dataset(a.path(), small_options(5));
  make_dataset(b.path(), small_options(5));
  int files = 0;
  for (const auto& e : fs::recursive_directory_iterator(a.path())) {
    if (!e.is_regular_file()) continue;
    ++files;
    const auto rel = fs::relative(e.path(), a.path());
    EXPECT_EQ(test::read_file(e.path()), test::read_file(b.path() / rel)) << rel;
  }
  EXPECT_GT(files, 20);
}

TEST(Dataset, RefusesNonEmptyRootUnlessForced) {
  test::TempDir dir("syn_force");
  make_dataset(dir.path(), small_options(6));
  EXPECT_ANY_THROW(make_dataset(dir.path(), small_options(6)));
  auto forced = small_options(6);
  forced.force = true;
  EXPECT_NO_THROW(make_dataset(dir.path(), forced));
}

TEST(Dataset, PoseTableRoundTrip) {
  test::TempDir dir("pose_tsv");
  Rng rng(7);
  std::vector<FrameTruth> rows;
  for (int i = 0; i < 5; ++i) rows.push_back({i * 3, random_geometry(rng)});
  write_pose_tsv(dir / "pose.tsv", rows);
  const auto back = read_pose_tsv(dir / "pose.tsv");
  ASSERT_EQ(back.size(), rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].frame, rows[i].frame);
    expect_geometry_near(back[i].geometry, rows[i].geometry, 0.0);
  }
}
