#include "support.hpp"

#include <atomic>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace fs = std::filesystem;

namespace lpr::test {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = fs::temp_directory_path() / ("lpr_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  fs::remove_all(path_);
  fs::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

RunConfig tiny_config(int num_videos) {
  RunConfig c;
  c.seed = 5;
  c.dataset.frame_stride = 1;
  c.dataset.k = 2;
  c.networks.resolution = 32;
  c.networks.pose_dim = 16;
  c.networks.identity_dim = 32;
  c.networks.encoder_width = 8;
  c.networks.mlp_hidden = 32;
  c.networks.base_channels = 32;
  c.networks.disc_channels = 4;
  c.networks.num_videos = num_videos;
  c.losses.extractor_width = 4;
  c.trainer.batch_size = 2;
  c.trainer.log_every = 1;
  c.trainer.sample_every = 1000;
  c.trainer.checkpoint_every = 1000;
  c.trainer.finetune_batch_size = 2;
  return c;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                      double step) {
  auto leaf = x.detach().clone().set_requires_grad(true);
  auto analytic = torch::autograd::grad({f(leaf)}, {leaf})[0].reshape({-1});
  auto base = x.detach().clone().reshape({-1});
  auto numeric = torch::zeros_like(base);
  torch::NoGradGuard no_grad;
  for (int64_t i = 0; i < base.numel(); ++i) {
    auto plus = base.clone(), minus = base.clone();
    plus[i] += step;
    minus[i] -= step;
    const double fp = f(plus.reshape(x.sizes())).item<double>();
    const double fm = f(minus.reshape(x.sizes())).item<double>();
    numeric[i] = (fp - fm) / (2 * step);
  }
  const double scale = std::max(numeric.abs().max().item<double>(), 1e-12);
  return (analytic - numeric).abs().max().item<double>() / scale;
}

}  // namespace lpr::test
