#pragma once

#include <stdexcept>
#include <string>

namespace qfb {

/// Malformed or non-finite numeric input.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A configuration value is outside its legal range.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Events arrived in an order the hardware block cannot accept.
class SequencingError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A calibration target cannot be reached.
class CalibrationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace qfb
