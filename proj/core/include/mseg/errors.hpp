#pragma once

#include <stdexcept>
#include <string>

namespace mseg {

// Base for everything thrown by this library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid argument / precondition violation. Maps to CLI exit code 1.
class ArgumentError : public Error {
public:
  explicit ArgumentError(const std::string& msg) : Error(msg) {}
};

// Malformed file contents (bad magic, truncated payload, unparsable record).
class FormatError : public Error {
public:
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// A required file or directory does not exist. Message names the path.
class NotFoundError : public Error {
public:
  explicit NotFoundError(const std::string& msg) : Error(msg) {}
};

// Dataset-level inconsistency: gaps in an index range, mismatched shapes
// between companion files, contradictory metadata.
class IntegrityError : public Error {
public:
  explicit IntegrityError(const std::string& msg) : Error(msg) {}
};

// Too few samples/timestamps to compute the requested quantity.
class InsufficientDataError : public Error {
public:
  explicit InsufficientDataError(const std::string& msg) : Error(msg) {}
};

// OS-level I/O failure (write failed, rename failed, ...).
class IoError : public Error {
public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace mseg
