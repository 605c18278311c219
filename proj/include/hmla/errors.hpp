#pragma once

#include <stdexcept>
#include <string>

namespace hmla {

// Dimension mismatch between operands.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Argument outside an operation's domain (empty input, non-finite score, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Unknown sequence, prefix or preset.
class NotFoundError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

// Page pool exhausted. The caller is expected to release sequences or stop admitting.
class CapacityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace hmla
