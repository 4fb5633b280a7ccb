#pragma once

#include <stdexcept>
#include <string>

namespace seufi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or graph shapes do not line up.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value violates a documented precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A model or tensor file could not be decoded.
class CorruptFileError : public Error {
 public:
  using Error::Error;
};

class VersionMismatchError : public Error {
 public:
  using Error::Error;
};

/// Fault bookkeeping misuse (double apply, stale handle, bad location).
class FaultStateError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

}  // namespace seufi
