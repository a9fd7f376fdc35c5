#pragma once

#include <atomic>
#include <iostream>
#include <string>

namespace crowdscale {

enum class LogLevel { quiet = 0, warn = 1, info = 2 };

inline std::atomic<LogLevel>& log_level() {
  static std::atomic<LogLevel> level{LogLevel::warn};
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level().load() >= LogLevel::info) std::clog << "[crowdscale] " << msg << '\n';
}

inline void log_warn(const std::string& msg) {
  if (log_level().load() >= LogLevel::warn) std::clog << "[crowdscale] warning: " << msg << '\n';
}

}  // namespace crowdscale
