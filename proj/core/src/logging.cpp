// Kept apart from the tensor code: spdlog is built against a different fmt
// than the one bundled with libtorch headers.
#include "lpr/logging.hpp"

#include <stdexcept>

#include <spdlog/spdlog.h>

namespace lpr::logging {

void set_level(Level level) {
  switch (level) {
    case Level::debug: spdlog::set_level(spdlog::level::debug); break;
    case Level::info: spdlog::set_level(spdlog::level::info); break;
    case Level::warn: spdlog::set_level(spdlog::level::warn); break;
    case Level::error: spdlog::set_level(spdlog::level::err); break;
    case Level::off: spdlog::set_level(spdlog::level::off); break;
  }
}

Level parse_level(std::string_view name) {
  if (name == "debug") return Level::debug;
  if (name == "info") return Level::info;
  if (name == "warn") return Level::warn;
  if (name == "error") return Level::error;
  if (name == "off") return Level::off;
  throw std::invalid_argument("unknown log level: " + std::string(name));
}

void debug(std::string_view message) { spdlog::debug("{}", message); }
void info(std::string_view message) { spdlog::info("{}", message); }
void warn(std::string_view message) { spdlog::warn("{}", message); }
void error(std::string_view message) { spdlog::error("{}", message); }

}  // namespace lpr::logging
