#include <benchmark/benchmark.h>

#include "lpr/augment.hpp"
#include "lpr/dataset.hpp"

namespace {

void BM_CropFrame(benchmark::State& state) {
  auto img = torch::rand({3, 128, 128}) * 2 - 1;
  const lpr::CropBox box = lpr::grow_crop_box({40, 30, 90, 100}, 0.8);
  for (auto _ : state) benchmark::DoNotOptimize(lpr::crop_frame(img, box, 64).image);
}
BENCHMARK(BM_CropFrame)->Unit(benchmark::kMicrosecond);

void BM_PoseAugment(benchmark::State& state) {
  auto img = torch::rand({3, 64, 64}) * 2 - 1;
  lpr::AugmentConfig cfg;
  cfg.p_blur = cfg.p_sharpen = cfg.p_contrast = cfg.p_jpeg = 1.0;
  lpr::Rng rng(1);
  for (auto _ : state) benchmark::DoNotOptimize(lpr::pose_augment(img, cfg, rng));
}
BENCHMARK(BM_PoseAugment)->Unit(benchmark::kMicrosecond);

}  // namespace
