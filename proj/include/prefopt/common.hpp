#pragma once

#include <stdexcept>
#include <string>

namespace prefopt {

// Invalid or inconsistent user-facing configuration or data. CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value detected during evaluation. CLI exit code 3.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace prefopt
