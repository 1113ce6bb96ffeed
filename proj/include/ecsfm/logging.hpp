// Copyright 2026 The ecsfm authors.
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

#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <string>

namespace ecsfm {

enum class LogLevel : int { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

namespace internal {

inline LogLevel ParseLogLevel(const char* value) {
  if (value == nullptr) return LogLevel::kWarn;
  const std::string s(value);
  if (s == "error" || s == "0") return LogLevel::kError;
  if (s == "warn" || s == "1") return LogLevel::kWarn;
  if (s == "info" || s == "2") return LogLevel::kInfo;
  if (s == "debug" || s == "3") return LogLevel::kDebug;
  return LogLevel::kWarn;
}

inline LogLevel& GlobalLogLevel() {
  static LogLevel level = ParseLogLevel(std::getenv("ECSFM_LOG"));
  return level;
}

inline std::mutex& LogMutex() {
  static std::mutex mutex;
  return mutex;
}

template <typename... Args>
void LogMessage(LogLevel level, const char* tag, const char* format,
                Args&&... args) {
  if (static_cast<int>(level) > static_cast<int>(GlobalLogLevel())) return;
  std::lock_guard<std::mutex> lock(LogMutex());
  std::fprintf(stderr, "[%s] ", tag);
  if constexpr (sizeof...(Args) == 0) {
    std::fprintf(stderr, "%s", format);
  } else {
    std::fprintf(stderr, format, std::forward<Args>(args)...);
  }
  std::fprintf(stderr, "\n");
}

}  // namespace internal

inline void SetLogLevel(LogLevel level) { internal::GlobalLogLevel() = level; }

template <typename... Args>
void LogError(const char* format, Args&&... args) {
  internal::LogMessage(LogLevel::kError, "error", format,
                       std::forward<Args>(args)...);
}

template <typename... Args>
void LogWarn(const char* format, Args&&... args) {
  internal::LogMessage(LogLevel::kWarn, "warn", format,
                       std::forward<Args>(args)...);
}

template <typename... Args>
void LogInfo(const char* format, Args&&... args) {
  internal::LogMessage(LogLevel::kInfo, "info", format,
                       std::forward<Args>(args)...);
}

template <typename... Args>
void LogDebug(const char* format, Args&&... args) {
  internal::LogMessage(LogLevel::kDebug, "debug", format,
                       std::forward<Args>(args)...);
}

}  // namespace ecsfm
