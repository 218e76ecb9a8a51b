#pragma once

#include <string_view>
#include <utility>

#include <fmt/format.h>

// Minimal leveled logging to stderr.
namespace hazesynth::log {

enum class Level { trace, debug, info, warn, error, off };

void set_level(Level level);
Level level();
// Accepts trace, debug, info, warn, error, off; throws InvalidArgument otherwise.
Level parse_level(std::string_view name);
void write(Level level, std::string_view message);

inline bool enabled(Level l) {
    return l >= level() && l != Level::off;
}

template <typename... Args>
void debug(fmt::format_string<Args...> f, Args&&... args) {
    if (enabled(Level::debug))
        write(Level::debug, fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
    if (enabled(Level::info))
        write(Level::info, fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
void warn(fmt::format_string<Args...> f, Args&&... args) {
    if (enabled(Level::warn))
        write(Level::warn, fmt::format(f, std::forward<Args>(args)...));
}

template <typename... Args>
void error(fmt::format_string<Args...> f, Args&&... args) {
    if (enabled(Level::error))
        write(Level::error, fmt::format(f, std::forward<Args>(args)...));
}

} // namespace hazesynth::log
