#pragma once

#include <stdexcept>
#include <string>

namespace phaseformer {

// Error categories map 1:1 onto CLI exit codes (see tools/).
enum class ErrorKind {
  dimension,    // shape/rank mismatch
  index,        // out-of-range index or label
  argument,     // invalid argument value
  segment,      // empty attention segment / all-false mask
  aggregation,  // pyramid coverage gap
  config,       // invalid or inconsistent configuration
  format,       // malformed or mismatched file content
  training,     // non-finite gradients, diverged loss
  input,        // inconsistent runtime inputs (e.g. length mismatch)
  io,           // filesystem failures
};

const char* error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(std::string(error_kind_name(kind)) + ": " + msg),
        kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& msg) {
  throw Error(kind, msg);
}

}  // namespace phaseformer
