#pragma once

#include <stdexcept>
#include <string>

namespace mqtts {

enum class ErrorKind {
  dimension,   // shape / size mismatch
  config,      // bad or inconsistent configuration
  input,       // bad runtime input (ids out of range, empty audio, ...)
  numeric,     // NaN or other numeric failure
  stream,      // malformed token stream
  contract,    // API misuse (non-scalar loss, mixed graphs, ...)
  io,          // file I/O, parse failures
  manifest,    // corpus manifest problems
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

inline const char* error_kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::config:    return "config";
    case ErrorKind::input:     return "input";
    case ErrorKind::numeric:   return "numeric";
    case ErrorKind::stream:    return "stream";
    case ErrorKind::contract:  return "contract";
    case ErrorKind::io:        return "io";
    case ErrorKind::manifest:  return "manifest";
  }
  return "unknown";
}

}  // namespace mqtts
