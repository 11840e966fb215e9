#pragma once

#include <stdexcept>
#include <string>

namespace unseg {

/// Bad caller input: shapes, ranges, malformed flags.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Object used out of sequence, e.g. a forward cache that no longer matches.
class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// NaN/Inf met where finite values are required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Structurally invalid file contents (bad magic, truncation, size mismatch).
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace unseg
