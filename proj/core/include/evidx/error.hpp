#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evidx {

enum class Errc {
  kInvalidArgument,
  kIo,
  kUnwritablePath,
  kAlreadyExists,
  kNotFound,
  kCorruptHeader,
  kCorruptRecord,
  kTruncated,
  kChecksumMismatch,
  kPayloadTooLarge,
  kBadOffset,
  kStaleOffset,
  kParse,
  kUnknownName,
  kOutOfRange,
  kDuplicate,
  kUnsorted,
  kSchemaMismatch,
  kInconsistent,
  kReadOnly,
  kBusy,
  kCapacityExceeded,
};

const char* errc_name(Errc code);

// All library failures are reported as evidx::Error. The code is stable and
// meant for programmatic checks; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message);

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

// Text-format errors carry the 1-based line and column of the offending token.
class ParseError : public Error {
 public:
  ParseError(const std::string& message, std::size_t line, std::size_t column);

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace evidx
