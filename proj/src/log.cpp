#include "hcanet/log.hpp"

#include <iostream>
#include <mutex>

namespace hcanet {

namespace {

std::mutex& sink_mutex() {
    static std::mutex m;
    return m;
}

void to_stderr(LogLevel level, const std::string& message) {
    std::cerr << (level == LogLevel::warning ? "warning: " : "") << message << '\n';
}

LogSink& sink() {
    static LogSink s = to_stderr;
    return s;
}

}  // namespace

void set_log_sink(LogSink s) {
    std::lock_guard lock(sink_mutex());
    sink() = std::move(s);
}

void reset_log_sink() { set_log_sink(to_stderr); }

void log_message(LogLevel level, const std::string& message) {
    std::lock_guard lock(sink_mutex());
    if (sink()) sink()(level, message);
}

}  // namespace hcanet
