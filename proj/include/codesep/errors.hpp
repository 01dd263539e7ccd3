#pragma once

#include <stdexcept>
#include <string>

namespace codesep {

// Bad or inconsistent configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Missing or malformed input data (CLI exit code 3).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure during training or inference, e.g. a NaN loss
// (CLI exit code 4). The message names the step at which it happened.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed serialized artifact (bitstream, checkpoint). Carries the byte
// offset at which parsing failed, or -1 when not applicable.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, long long byte_offset = -1)
      : std::runtime_error(byte_offset >= 0
                               ? msg + " (byte offset " + std::to_string(byte_offset) + ")"
                               : msg),
        offset_(byte_offset) {}
  long long byte_offset() const { return offset_; }

 private:
  long long offset_;
};

}  // namespace codesep
