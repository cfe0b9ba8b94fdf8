#pragma once

#include <stdexcept>
#include <string>

namespace cmunet {

// Shapes that cannot be combined by an operation.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A caller broke an API precondition (non-scalar loss, mixed dtypes, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Bad input data: labels out of range, malformed images, empty matrices.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupt or unsupported on-disk container.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration values or unknown configuration keys.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cmunet
