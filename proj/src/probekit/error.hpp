#pragma once

#include <stdexcept>
#include <string>

namespace probekit {

// Broad failure classes. The numeric values double as CLI exit codes.
enum class ErrorKind : int {
  internal = 1,
  usage = 2,
  io = 3,
  data = 4,
  numeric = 5,
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

/// Parse failure in a corpus reader; `line` is 1-based (0 when unknown).
class ParseError : public DataError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : DataError(line ? what + " (line " + std::to_string(line) + ")" : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

class IndexError : public Error {
 public:
  explicit IndexError(const std::string& what) : Error(ErrorKind::usage, what) {}
};

}  // namespace probekit
