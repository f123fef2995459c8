#include <benchmark/benchmark.h>

#include "lpr/config.hpp"
#include "lpr/losses.hpp"
#include "lpr/networks.hpp"
#include "lpr/trainer.hpp"

namespace {

lpr::RunConfig desk_config() {
  lpr::RunConfig c;
  c.networks.resolution = 64;
  c.networks.pose_dim = 64;
  c.networks.identity_dim = 128;
  c.networks.encoder_width = 16;
  c.networks.mlp_hidden = 256;
  c.networks.base_channels = 64;
  c.networks.disc_channels = 8;
  c.networks.num_videos = 4;
  c.trainer.batch_size = 4;
  return c;
}

void BM_IdentityEncoder(benchmark::State& state) {
  torch::NoGradGuard g;
  lpr::Networks nets(desk_config().networks);
  auto x = torch::randn({32, 3, 64, 64});
  for (auto _ : state) benchmark::DoNotOptimize(nets.identity_encoder(x));
}
BENCHMARK(BM_IdentityEncoder)->Unit(benchmark::kMillisecond);

void BM_PoseEncoder(benchmark::State& state) {
  torch::NoGradGuard g;
  lpr::Networks nets(desk_config().networks);
  auto x = torch::randn({4, 3, 64, 64});
  for (auto _ : state) benchmark::DoNotOptimize(nets.pose_encoder(x));
}
BENCHMARK(BM_PoseEncoder)->Unit(benchmark::kMillisecond);

void BM_Generator(benchmark::State& state) {
  torch::NoGradGuard g;
  lpr::Networks nets(desk_config().networks);
  auto xi = torch::randn({4, 128});
  auto yp = torch::randn({4, 64});
  for (auto _ : state) benchmark::DoNotOptimize(nets.generate(xi, yp).rgb);
}
BENCHMARK(BM_Generator)->Unit(benchmark::kMillisecond);

void BM_Discriminator(benchmark::State& state) {
  torch::NoGradGuard g;
  lpr::Networks nets(desk_config().networks);
  auto x = torch::randn({8, 3, 64, 64});
  auto idx = torch::zeros({8}, torch::kLong);
  for (auto _ : state) benchmark::DoNotOptimize(nets.discriminator(x, idx).score);
}
BENCHMARK(BM_Discriminator)->Unit(benchmark::kMillisecond);

void BM_PerceptualLoss(benchmark::State& state) {
  torch::NoGradGuard g;
  lpr::RandomConvExtractor ex(1234, 16);
  auto a = torch::randn({4, 3, 64, 64}), b = torch::randn({4, 3, 64, 64});
  for (auto _ : state) benchmark::DoNotOptimize(lpr::perceptual_loss(a, b, ex, ex.layer_names()));
}
BENCHMARK(BM_PerceptualLoss)->Unit(benchmark::kMillisecond);

void BM_MetaTrainStep(benchmark::State& state) {
  auto cfg = desk_config();
  lpr::TrainState ts(cfg);
  auto ctx = cfg.loss_context();
  std::vector<lpr::Episode> batch;
  for (int b = 0; b < cfg.trainer.batch_size; ++b) {
    lpr::Episode e;
    e.identity_frames = torch::rand({8, 3, 64, 64}) * 2 - 1;
    e.pose_frame_raw = torch::rand({3, 64, 64}) * 2 - 1;
    e.pose_frame_augmented = e.pose_frame_raw.clone();
    e.pose_mask = (torch::rand({1, 64, 64}) > 0.5).to(torch::kFloat32);
    e.video_index = b;
    batch.push_back(e);
  }
  for (auto _ : state) benchmark::DoNotOptimize(lpr::meta_train_step(ts, batch, ctx).iteration);
}
BENCHMARK(BM_MetaTrainStep)->Unit(benchmark::kMillisecond)->MinTime(3.0);

}  // namespace
BENCHMARK_MAIN();
