#pragma once

#include <stdexcept>
#include <string>

namespace smartcast {

// Failure categories; the numeric values double as CLI exit codes.
enum class ErrorKind : int {
  config = 2,
  data = 3,
  numeric = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

// Wraps a failure with the name of the pipeline stage that raised it.
class StageError : public Error {
 public:
  StageError(std::string stage, ErrorKind kind, const std::string& cause);

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace smartcast
