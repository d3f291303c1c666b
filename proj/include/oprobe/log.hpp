// Copyright 2026 The oprobe Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>

namespace oprobe::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

inline Level parse_level(std::string_view s) {
  if (s == "debug") return Level::debug;
  if (s == "info") return Level::info;
  if (s == "warn" || s == "warning") return Level::warn;
  if (s == "error") return Level::error;
  if (s == "off" || s == "none") return Level::off;
  return Level::warn;
}

// Threshold read once from OPROBE_LOG; defaults to warn.
inline Level& threshold() {
  static Level level = [] {
    const char* env = std::getenv("OPROBE_LOG");
    return env ? parse_level(env) : Level::warn;
  }();
  return level;
}

inline void set_level(Level level) { threshold() = level; }

inline void write(Level level, const std::string& msg) {
  if (level < threshold()) return;
  static std::mutex mu;
  static constexpr const char* tags[] = {"debug", "info", "warn", "error"};
  std::lock_guard<std::mutex> lock(mu);
  std::cerr << "[oprobe:" << tags[static_cast<int>(level)] << "] " << msg
            << '\n';
}

template <typename... Args>
void emit(Level level, Args&&... args) {
  if (level < threshold()) return;
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  write(level, oss.str());
}

template <typename... Args> void debug(Args&&... a) { emit(Level::debug, std::forward<Args>(a)...); }
template <typename... Args> void info(Args&&... a) { emit(Level::info, std::forward<Args>(a)...); }
template <typename... Args> void warn(Args&&... a) { emit(Level::warn, std::forward<Args>(a)...); }
template <typename... Args> void error(Args&&... a) { emit(Level::error, std::forward<Args>(a)...); }

}  // namespace oprobe::log
