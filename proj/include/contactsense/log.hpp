#pragma once

#include <string>

namespace contactsense {

enum class LogLevel : int { Error = 0, Warn = 1, Info = 2, Debug = 3 };

// Threshold comes from the CONTACT_SENSE_LOG environment variable
// ("error" | "warn" | "info" | "debug", or 0..3). Defaults to warn.
LogLevel log_threshold();

void log(LogLevel level, const std::string& message);

inline void log_error(const std::string& m) { log(LogLevel::Error, m); }
inline void log_warn(const std::string& m) { log(LogLevel::Warn, m); }
inline void log_info(const std::string& m) { log(LogLevel::Info, m); }
inline void log_debug(const std::string& m) { log(LogLevel::Debug, m); }

}  // namespace contactsense
