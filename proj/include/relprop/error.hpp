#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace relprop {

enum class ErrorKind {
  Shape,        // tensor / layer shape mismatch
  Io,           // missing file, unwritable path
  Format,       // malformed manifest, CSV, JSON
  Checksum,     // weight blob hash mismatch
  BadMagic,     // IDX magic number
  Truncated,    // file shorter than its header promises
  Config,       // invalid rule / plan / flag combination
  Numeric,      // non-finite values (e.g. training divergence)
  Unsupported,  // layer kind not handled by an operation
  Audit,        // conservation audit refused
  Excluded,     // sample cannot be evaluated
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Shape: return "shape";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Checksum: return "checksum";
    case ErrorKind::BadMagic: return "bad-magic";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Config: return "config";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::Audit: return "audit";
    case ErrorKind::Excluded: return "excluded";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace relprop
