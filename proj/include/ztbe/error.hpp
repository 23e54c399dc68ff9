#pragma once

#include <stdexcept>
#include <string>

namespace ztbe {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A field or index lies outside its representable range.
struct RangeError : Error {
  using Error::Error;
};

struct InvalidArgument : Error {
  using Error::Error;
};

// Container parse failures. Each subclass is a distinct, catchable class.
struct FormatError : Error {
  using Error::Error;
};

struct BadMagicError : FormatError {
  using FormatError::FormatError;
};

struct VersionError : FormatError {
  using FormatError::FormatError;
};

struct TruncatedError : FormatError {
  using FormatError::FormatError;
};

// Structural invariant violation: popcount/segment mismatch, misaligned
// offsets, non-zero padding and the like.
struct CorruptError : FormatError {
  using FormatError::FormatError;
};

struct IoError : Error {
  using Error::Error;
};

struct DtypeError : Error {
  using Error::Error;
};

} // namespace ztbe
