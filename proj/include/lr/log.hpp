#pragma once

#include <cstdio>

namespace lr {

enum class LogLevel { debug = 0, info = 1, warn = 2, error = 3 };

inline LogLevel& log_level() {
    static LogLevel level = LogLevel::info;
    return level;
}

}  // namespace lr

#define LR_LOG(lvl, tag, ...)                                  \
    do {                                                       \
        if (static_cast<int>(lvl) >=                           \
            static_cast<int>(::lr::log_level())) {             \
            std::fprintf(stderr, "[%s] ", tag);                \
            std::fprintf(stderr, __VA_ARGS__);                 \
            std::fprintf(stderr, "\n");                        \
        }                                                      \
    } while (0)

#define LR_LOG_DEBUG(...) LR_LOG(::lr::LogLevel::debug, "debug", __VA_ARGS__)
#define LR_LOG_INFO(...) LR_LOG(::lr::LogLevel::info, "info", __VA_ARGS__)
#define LR_LOG_WARN(...) LR_LOG(::lr::LogLevel::warn, "warn", __VA_ARGS__)
#define LR_LOG_ERROR(...) LR_LOG(::lr::LogLevel::error, "error", __VA_ARGS__)
