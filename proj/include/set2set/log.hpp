#pragma once

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>

namespace set2set::log {

enum class Level { error = 0, warn = 1, info = 2, debug = 3 };

inline std::atomic<int>& threshold() {
  static std::atomic<int> level{static_cast<int>(Level::warn)};
  return level;
}

inline void set_level(Level level) { threshold() = static_cast<int>(level); }

// Accepts error|warn|info|debug; anything else leaves the level untouched.
inline bool set_level(std::string_view name) {
  if (name == "error") set_level(Level::error);
  else if (name == "warn") set_level(Level::warn);
  else if (name == "info") set_level(Level::info);
  else if (name == "debug") set_level(Level::debug);
  else return false;
  return true;
}

inline bool enabled(Level level) { return static_cast<int>(level) <= threshold(); }

template <typename... Args>
void write(Level level, const Args&... args) {
  if (!enabled(level)) return;
  static std::mutex mu;
  static constexpr const char* tags[] = {"error", "warn", "info", "debug"};
  std::ostringstream oss;
  oss << "[" << tags[static_cast<int>(level)] << "] ";
  (oss << ... << args);
  std::lock_guard lock(mu);
  std::cerr << oss.str() << '\n';
}

template <typename... Args> void error(const Args&... args) { write(Level::error, args...); }
template <typename... Args> void warn(const Args&... args) { write(Level::warn, args...); }
template <typename... Args> void info(const Args&... args) { write(Level::info, args...); }
template <typename... Args> void debug(const Args&... args) { write(Level::debug, args...); }

}  // namespace set2set::log
