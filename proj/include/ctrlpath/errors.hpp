#pragma once

#include <stdexcept>
#include <string>

namespace ctrlpath {

// Bad inputs: malformed files, violated preconditions. Mapped to exit code 1.
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failure: divergence, non-finite values, failed factorizations.
// Mapped to exit code 2.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ctrlpath
