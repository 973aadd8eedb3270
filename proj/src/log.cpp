#include "contactsense/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <mutex>

namespace contactsense {

namespace {

LogLevel parse_level(const char* s) {
  if (s == nullptr || *s == '\0') return LogLevel::Warn;
  if (std::strcmp(s, "error") == 0 || std::strcmp(s, "0") == 0) return LogLevel::Error;
  if (std::strcmp(s, "warn") == 0 || std::strcmp(s, "1") == 0) return LogLevel::Warn;
  if (std::strcmp(s, "info") == 0 || std::strcmp(s, "2") == 0) return LogLevel::Info;
  if (std::strcmp(s, "debug") == 0 || std::strcmp(s, "3") == 0) return LogLevel::Debug;
  return LogLevel::Warn;
}

const char* level_tag(LogLevel level) {
  switch (level) {
    case LogLevel::Error: return "error";
    case LogLevel::Warn: return "warn";
    case LogLevel::Info: return "info";
    case LogLevel::Debug: return "debug";
  }
  return "?";
}

std::mutex g_log_mutex;

}  // namespace

LogLevel log_threshold() {
  static const LogLevel level = parse_level(std::getenv("CONTACT_SENSE_LOG"));
  return level;
}

void log(LogLevel level, const std::string& message) {
  if (static_cast<int>(level) > static_cast<int>(log_threshold())) return;
  std::lock_guard<std::mutex> guard(g_log_mutex);
  std::fprintf(stderr, "[contactsense %s] %s\n", level_tag(level), message.c_str());
}

}  // namespace contactsense
