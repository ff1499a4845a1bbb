#include "physctl/log.hpp"

#include <iostream>
#include <mutex>

namespace physctl {

namespace {

std::mutex g_mutex;

LogSink& sink() {
  static LogSink s = [](LogLevel level, std::string_view msg) {
    if (level == LogLevel::Warning) std::cerr << "warning: " << msg << '\n';
  };
  return s;
}

}  // namespace

void set_log_sink(LogSink s) {
  std::lock_guard lock(g_mutex);
  sink() = std::move(s);
}

void log(LogLevel level, const std::string& message) {
  std::lock_guard lock(g_mutex);
  if (sink()) sink()(level, message);
}

}  // namespace physctl
