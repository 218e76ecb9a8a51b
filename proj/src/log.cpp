#include "hazesynth/log.hpp"

#include <atomic>
#include <chrono>
#include <cstdio>
#include <mutex>

#include "hazesynth/errors.hpp"

namespace hazesynth::log {

namespace {

std::atomic<Level> g_level{Level::info};
std::mutex g_mutex;

const char* name_of(Level l) {
    switch (l) {
    case Level::trace: return "trace";
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    case Level::off: return "off";
    }
    return "?";
}

} // namespace

void set_level(Level level) {
    g_level.store(level);
}

Level level() {
    return g_level.load();
}

Level parse_level(std::string_view name) {
    for (Level l : {Level::trace, Level::debug, Level::info, Level::warn, Level::error, Level::off})
        if (name == name_of(l))
            return l;
    throw InvalidArgument(fmt::format("unknown log level '{}'", name));
}

void write(Level level, std::string_view message) {
    using namespace std::chrono;
    const auto now = system_clock::now();
    const auto ms = duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    const std::time_t tt = system_clock::to_time_t(now);
    std::tm tm{};
    localtime_r(&tt, &tm);
    std::lock_guard lock(g_mutex);
    std::fprintf(stderr, "[%02d:%02d:%02d.%03d] [%s] %.*s\n", tm.tm_hour, tm.tm_min, tm.tm_sec,
                 static_cast<int>(ms), name_of(level), static_cast<int>(message.size()), message.data());
}

} // namespace hazesynth::log
