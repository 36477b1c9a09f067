// SPDX-License-Identifier: Apache-2.0
#include "emofuse/error.hpp"

namespace emofuse {

const char *errorKindName(ErrorKind kind) {
  switch (kind) {
  case ErrorKind::kShape:
    return "shape error";
  case ErrorKind::kValidation:
    return "validation error";
  case ErrorKind::kContract:
    return "contract error";
  case ErrorKind::kConfig:
    return "config error";
  case ErrorKind::kIo:
    return "io error";
  case ErrorKind::kFormat:
    return "format error";
  case ErrorKind::kCoverage:
    return "coverage error";
  case ErrorKind::kAlignment:
    return "alignment error";
  case ErrorKind::kNumeric:
    return "numeric error";
  }
  return "error";
}

static std::string formatMessage(const std::string &file, std::size_t line,
                                 const std::string &msg) {
  std::string out = file;
  if (line > 0)
    out += ":" + std::to_string(line);
  return out + ": " + msg;
}

FormatError::FormatError(const std::string &file, std::size_t line,
                         const std::string &msg)
    : Error(ErrorKind::kFormat, formatMessage(file, line, msg)), line_(line) {}

} // namespace emofuse
