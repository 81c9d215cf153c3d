#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace twinkit {

using Vec = std::vector<double>;

// Error taxonomy shared by all modules. The CLI maps these onto its
// exit-code contract: config -> 1, divergence -> 2, I/O -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct ShapeError : Error {
  using Error::Error;
};
struct DataError : Error {
  using Error::Error;
};
struct ParseError : Error {
  using Error::Error;
};
struct AlignmentError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};

struct DivergenceError : Error {
  int round = -1;
  int area = -1;
  int step = -1;
  double loss = 0.0;
  DivergenceError(const std::string& msg, int round_, int area_, int step_,
                  double loss_)
      : Error(msg), round(round_), area(area_), step(step_), loss(loss_) {}
};

// Minimal stderr logger. Verbosity comes from the TWIN_LOG env var
// (error | info | debug); default is info.
enum class LogLevel { kError = 0, kInfo = 1, kDebug = 2 };
LogLevel log_level();
void log_error(const std::string& msg);
void log_info(const std::string& msg);
void log_debug(const std::string& msg);

// Locale-free shortest round-trip formatting for doubles; all CSV/report
// output goes through this so reruns are byte-identical.
std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace twinkit
