#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

namespace lpr {

inline constexpr const char* kCheckpointMagic = "lpr-ckpt-v1";

/// Single-file archive of named tensors plus training metadata.
///
/// Layout (little endian):
///   "lpr-ckpt-v1\n"
///   u64 length, config JSON text
///   i64 iteration
///   u64 length, rng state text
///   u64 tensor count, then per tensor (sorted by name):
///     u64 name length, name, u8 dtype, u32 ndim, i64 dims[ndim], raw contiguous data
/// Serialisation is canonical: equal contents give equal bytes.
struct Checkpoint {
  std::string config_json;
  int64_t iteration = 0;
  std::string rng_state;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;

  const torch::Tensor* find(const std::string& name) const;
  const torch::Tensor& at(const std::string& name) const;
  void put(const std::string& name, const torch::Tensor& t);

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);
  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

/// FNV-1a over the serialised bytes; used to compare runs.
uint64_t checksum(const std::string& bytes);

}  // namespace lpr
