#pragma once

#include <stdexcept>
#include <string>

namespace tody {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind { kConfig = 2, kData = 3, kNumeric = 4, kInternal = 5 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

// Malformed or inconsistent input data (parse, schema, empty dataset).
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

// Shape mismatches and violated preconditions are programming errors.
struct ShapeError : Error {
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kInternal, what) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& what) : Error(ErrorKind::kInternal, what) {}
};

// Checkpoint written by an incompatible configuration or format revision.
struct VersionError : Error {
  explicit VersionError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

// A metric that is undefined for its input, e.g. AP over a single class.
struct MetricError : Error {
  explicit MetricError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

}  // namespace tody
