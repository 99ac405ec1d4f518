#include "refcolor/log.hpp"

#include <atomic>

namespace refcolor {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::kInfo)};

const char* level_tag(LogLevel level) {
    switch (level) {
        case LogLevel::kDebug: return "debug";
        case LogLevel::kInfo: return "info";
        case LogLevel::kWarn: return "warn";
        case LogLevel::kError: return "error";
    }
    return "?";
}
}  // namespace

LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void set_log_level(LogLevel level) { g_level.store(static_cast<int>(level)); }

void set_log_level(const std::string& name) {
    if (name == "debug") set_log_level(LogLevel::kDebug);
    else if (name == "info") set_log_level(LogLevel::kInfo);
    else if (name == "warn") set_log_level(LogLevel::kWarn);
    else if (name == "error") set_log_level(LogLevel::kError);
    else log_msg(LogLevel::kWarn, "unknown log level '%s', keeping current", name.c_str());
}

void log_msg(LogLevel level, const char* fmt, ...) {
    if (static_cast<int>(level) < g_level.load()) return;
    char ts[32];
    std::time_t now = std::time(nullptr);
    std::tm tmv{};
#if defined(_WIN32)
    localtime_s(&tmv, &now);
#else
    localtime_r(&now, &tmv);
#endif
    std::strftime(ts, sizeof(ts), "%H:%M:%S", &tmv);
    std::fprintf(stderr, "[%s] [%s] ", ts, level_tag(level));
    va_list args;
    va_start(args, fmt);
    std::vfprintf(stderr, fmt, args);
    va_end(args);
    std::fputc('\n', stderr);
}

}  // namespace refcolor
