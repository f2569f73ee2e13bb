#include "ctxnmt/log.h"

#include <iostream>
#include <mutex>

namespace ctxnmt {

namespace {

std::mutex g_mutex;

void default_sink(LogLevel level, const std::string& message) {
  std::cerr << (level == LogLevel::kWarning ? "WARNING: " : "") << message << '\n';
}

LogSink& sink() {
  static LogSink s = default_sink;
  return s;
}

void emit(LogLevel level, const std::string& message) {
  std::lock_guard<std::mutex> lock(g_mutex);
  if (sink()) sink()(level, message);
}

}  // namespace

LogSink set_log_sink(LogSink s) {
  std::lock_guard<std::mutex> lock(g_mutex);
  LogSink previous = std::move(sink());
  sink() = std::move(s);
  return previous;
}

void log_info(const std::string& message) { emit(LogLevel::kInfo, message); }
void log_warning(const std::string& message) { emit(LogLevel::kWarning, message); }

}  // namespace ctxnmt
