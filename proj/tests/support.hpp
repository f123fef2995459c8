#pragma once

#include <filesystem>
#include <functional>
#include <string>

#include <torch/torch.h>

#include "lpr/config.hpp"

namespace lpr::test {

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

 private:
  std::filesystem::path path_;
};

/// Small, fast networks at 32x32 for unit tests.
RunConfig tiny_config(int num_videos = 2);

std::string read_file(const std::filesystem::path& p);

/// Largest |analytic - central difference| over the elements of `x`, divided by
/// the largest |central difference|. `f` must map a float64 tensor to a scalar.
double gradient_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                      double step = 1e-6);

}  // namespace lpr::test
