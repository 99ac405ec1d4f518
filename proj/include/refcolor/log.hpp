#pragma once

#include <cstdarg>
#include <cstdio>
#include <ctime>
#include <string>

namespace refcolor {

enum class LogLevel { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

LogLevel log_level();
void set_log_level(LogLevel level);
void set_log_level(const std::string& name);  // "debug" | "info" | "warn" | "error"

void log_msg(LogLevel level, const char* fmt, ...);

}  // namespace refcolor

#define RC_LOG_DEBUG(...) ::refcolor::log_msg(::refcolor::LogLevel::kDebug, __VA_ARGS__)
#define RC_LOG_INFO(...) ::refcolor::log_msg(::refcolor::LogLevel::kInfo, __VA_ARGS__)
#define RC_LOG_WARN(...) ::refcolor::log_msg(::refcolor::LogLevel::kWarn, __VA_ARGS__)
#define RC_LOG_ERROR(...) ::refcolor::log_msg(::refcolor::LogLevel::kError, __VA_ARGS__)
