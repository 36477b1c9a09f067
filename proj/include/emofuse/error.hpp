// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace emofuse {

enum class ErrorKind {
  kShape,
  kValidation,
  kContract,
  kConfig,
  kIo,
  kFormat,
  kCoverage,
  kAlignment,
  kNumeric,
};

const char *errorKindName(ErrorKind kind);

/// Base for every error raised by the toolkit. The C API maps `kind()` onto
/// its status codes.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string &w) : Error(ErrorKind::kShape, w) {}
};
struct ValidationError : Error {
  explicit ValidationError(const std::string &w)
      : Error(ErrorKind::kValidation, w) {}
};
struct ContractError : Error {
  explicit ContractError(const std::string &w)
      : Error(ErrorKind::kContract, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string &w) : Error(ErrorKind::kConfig, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string &w) : Error(ErrorKind::kIo, w) {}
};
struct CoverageError : Error {
  explicit CoverageError(const std::string &w)
      : Error(ErrorKind::kCoverage, w) {}
};
struct AlignmentError : Error {
  explicit AlignmentError(const std::string &w)
      : Error(ErrorKind::kAlignment, w) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string &w)
      : Error(ErrorKind::kNumeric, w) {}
};

/// Malformed input file. Carries the 1-based line number when known (0 when
/// not line-specific).
class FormatError : public Error {
public:
  FormatError(const std::string &file, std::size_t line, const std::string &msg);
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

} // namespace emofuse
