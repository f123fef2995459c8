#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace lpr {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration value or unknown configuration key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Tensor shape or dimensionality mismatch at a module boundary.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A loss term evaluated to NaN or Inf; the training step was not applied.
class NonFiniteLossError : public Error {
 public:
  explicit NonFiniteLossError(std::string term)
      : Error("non-finite loss term: " + term), term_(std::move(term)) {}
  const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

/// All sampling in the library draws from explicitly passed engines of this type.
using Rng = std::mt19937_64;

/// Always consumes exactly one engine draw, also for degenerate ranges.
inline double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline int64_t uniform_int(Rng& rng, int64_t lo, int64_t hi) {
  return std::uniform_int_distribution<int64_t>(lo, hi)(rng);
}

/// Always consumes exactly one engine draw.
inline bool bernoulli(Rng& rng, double p) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < p; }

/// Stateless 64-bit mixer used to derive independent stream seeds.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string rng_to_string(const Rng& rng);
Rng rng_from_string(const std::string& text);

/// Number of worker threads for prefetch and export; honours LPR_NUM_WORKERS.
int num_workers(int fallback = 1);

}  // namespace lpr
