#pragma once

#include <stdexcept>
#include <string>

namespace featherpoint {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Tensor shapes or dimensions that do not line up.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Argument outside its valid domain (negative exponent, tau <= 0, ...).
class ValueError : public Error {
public:
    using Error::Error;
};

/// NaN or Inf where finite numbers are required.
class NumericError : public Error {
public:
    using Error::Error;
};

/// Filesystem or parse failure on external input.
class IoError : public Error {
public:
    using Error::Error;
};

/// Invalid run configuration; the message starts with the offending key path.
class ConfigError : public ValueError {
public:
    using ValueError::ValueError;
};

/// Model file decoding failures. Each failure mode has its own type so
/// callers can tell a stale file from a damaged one.
class FormatError : public Error {
public:
    using Error::Error;
};
class VersionMismatchError : public FormatError {
public:
    using FormatError::FormatError;
};
class TruncatedPayloadError : public FormatError {
public:
    using FormatError::FormatError;
};
class ChecksumError : public FormatError {
public:
    using FormatError::FormatError;
};

}  // namespace featherpoint
