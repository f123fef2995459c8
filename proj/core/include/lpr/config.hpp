#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "lpr/augment.hpp"
#include "lpr/dataset.hpp"
#include "lpr/losses.hpp"
#include "lpr/networks.hpp"

namespace lpr {

struct DatasetSection {
  double crop_growth = 0.8;
  int frame_stride = 25;
  int k = 8;
  bool use_segmentation = true;
  int prefetch_capacity = 16;
};

struct LossSection {
  LossWeights weights;
  std::vector<std::string> generic_layers{"relu1", "relu2", "relu3", "relu4"};
  uint64_t extractor_seed = 1234;
  int extractor_width = 16;
};

struct TrainerSection {
  int batch_size = 8;
  double lr_g = 2e-4;
  double lr_d = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int steps = 1000;
  int log_every = 100;
  int sample_every = 1000;
  int checkpoint_every = 1000;
  int finetune_steps = 600;
  int finetune_frames = 32;
  int finetune_batch_size = 4;
};

struct EvaluationSection {
  int queries_per_group = 100;
  std::vector<int> topn{10, 20, 50, 100};
  int probe_hidden = 768;
  int probe_steps = 3000;
  double probe_lr = 1e-3;
};

/// Full configuration tree. Parsing rejects unknown keys, reporting their path.
struct RunConfig {
  uint64_t seed = 0;
  DatasetSection dataset;
  AugmentConfig augment;
  NetworkConfig networks;
  LossSection losses;
  TrainerSection trainer;
  EvaluationSection evaluation;

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  std::string dump() const;  // canonical text (sorted keys)

  PreprocessConfig preprocess() const { return {networks.resolution, dataset.crop_growth}; }
  SamplerConfig sampler() const;
  LossContext loss_context() const;
};

}  // namespace lpr
