#pragma once

#include <functional>
#include <string>

namespace hcanet {

enum class LogLevel { info, warning };

using LogSink = std::function<void(LogLevel, const std::string&)>;

/// Replaces the process-wide sink (default: stderr). Pass nullptr to silence.
void set_log_sink(LogSink sink);
/// Restores the stderr sink.
void reset_log_sink();
void log_message(LogLevel level, const std::string& message);

inline void log_warning(const std::string& message) { log_message(LogLevel::warning, message); }
inline void log_info(const std::string& message) { log_message(LogLevel::info, message); }

}  // namespace hcanet
