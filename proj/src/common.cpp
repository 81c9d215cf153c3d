#include "twinkit/common.hpp"

#include <charconv>
#include <cstdlib>
#include <iostream>
#include <mutex>

namespace twinkit {

LogLevel log_level() {
  static LogLevel level = [] {
    const char* env = std::getenv("TWIN_LOG");
    if (!env) return LogLevel::kInfo;
    std::string v(env);
    if (v == "error") return LogLevel::kError;
    if (v == "debug") return LogLevel::kDebug;
    return LogLevel::kInfo;
  }();
  return level;
}

namespace {
std::mutex g_log_mutex;

void emit(const char* tag, const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_log_mutex);
  std::cerr << tag << msg << '\n';
}
}  // namespace

void log_error(const std::string& msg) { emit("[error] ", msg); }

void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::kInfo) emit("[info] ", msg);
}

void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::kDebug) emit("[debug] ", msg);
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc{} || res.ptr != last) {
    throw ParseError("not a number: '" + s + "'");
  }
  return v;
}

}  // namespace twinkit
