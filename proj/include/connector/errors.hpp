#pragma once

#include <stdexcept>
#include <string>

namespace connector {

/// Caller supplied arguments or configuration that cannot be honoured.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input files or in-memory data violate a format or structural invariant.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training or a numeric kernel produced non-finite values.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace connector
