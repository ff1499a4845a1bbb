#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace physctl {

enum class LogLevel { Debug, Info, Warning };

using LogSink = std::function<void(LogLevel, std::string_view)>;

// Default sink writes warnings to stderr and drops the rest.
void set_log_sink(LogSink sink);
void log(LogLevel level, const std::string& message);
inline void warn(const std::string& message) { log(LogLevel::Warning, message); }
inline void info(const std::string& message) { log(LogLevel::Info, message); }

}  // namespace physctl
