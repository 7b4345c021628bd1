#pragma once

#include <stdexcept>
#include <string>

namespace ghostspec {

// Bad paths, malformed files, violated preconditions. The CLI maps these to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// SVD non-convergence, degenerate spectra. The CLI maps these to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ghostspec
