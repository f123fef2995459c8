#pragma once

#include <string>
#include <string_view>

namespace lpr::logging {

enum class Level { debug, info, warn, error, off };

void set_level(Level level);
/// Parses debug|info|warn|error|off.
Level parse_level(std::string_view name);

void debug(std::string_view message);
void info(std::string_view message);
void warn(std::string_view message);
void error(std::string_view message);

}  // namespace lpr::logging
