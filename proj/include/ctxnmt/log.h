#ifndef CTXNMT_LOG_H_
#define CTXNMT_LOG_H_

#include <functional>
#include <string>

namespace ctxnmt {

enum class LogLevel { kInfo, kWarning };

using LogSink = std::function<void(LogLevel, const std::string&)>;

// Replaces the process-wide sink (stderr by default); returns the previous one.
LogSink set_log_sink(LogSink sink);
void log_info(const std::string& message);
void log_warning(const std::string& message);

}  // namespace ctxnmt

#endif  // CTXNMT_LOG_H_
