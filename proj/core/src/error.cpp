#include "evidx/error.hpp"

namespace evidx {

const char* errc_name(Errc code) {
  switch (code) {
    case Errc::kInvalidArgument: return "invalid argument";
    case Errc::kIo: return "i/o error";
    case Errc::kUnwritablePath: return "unwritable path";
    case Errc::kAlreadyExists: return "already exists";
    case Errc::kNotFound: return "not found";
    case Errc::kCorruptHeader: return "corrupt header";
    case Errc::kCorruptRecord: return "corrupt record";
    case Errc::kTruncated: return "truncated";
    case Errc::kChecksumMismatch: return "checksum mismatch";
    case Errc::kPayloadTooLarge: return "payload too large";
    case Errc::kBadOffset: return "bad offset";
    case Errc::kStaleOffset: return "stale offset";
    case Errc::kParse: return "parse error";
    case Errc::kUnknownName: return "unknown name";
    case Errc::kOutOfRange: return "out of range";
    case Errc::kDuplicate: return "duplicate";
    case Errc::kUnsorted: return "unsorted";
    case Errc::kSchemaMismatch: return "schema mismatch";
    case Errc::kInconsistent: return "inconsistent";
    case Errc::kReadOnly: return "read-only";
    case Errc::kBusy: return "busy";
    case Errc::kCapacityExceeded: return "capacity exceeded";
  }
  return "unknown error";
}

Error::Error(Errc code, const std::string& message)
    : std::runtime_error(std::string(errc_name(code)) + ": " + message),
      code_(code) {}

ParseError::ParseError(const std::string& message, std::size_t line,
                       std::size_t column)
    : Error(Errc::kParse, "line " + std::to_string(line) + ", column " +
                              std::to_string(column) + ": " + message),
      line_(line),
      column_(column) {}

}  // namespace evidx
