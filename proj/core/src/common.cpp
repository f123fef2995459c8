#include "lpr/common.hpp"

#include <cstdlib>
#include <sstream>

namespace lpr {

std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_string(const std::string& text) {
  Rng rng;
  std::istringstream is(text);
  is >> rng;
  if (!is) throw Error("corrupt rng state");
  return rng;
}

int num_workers(int fallback) {
  if (const char* env = std::getenv("LPR_NUM_WORKERS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v >= 1) return static_cast<int>(v);
  }
  return fallback;
}

}  // namespace lpr
