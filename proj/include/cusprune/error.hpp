#pragma once

#include <stdexcept>
#include <string>

namespace cusprune {

// Input or invariant violation. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Filesystem failure (missing file, unwritable path). Maps to CLI exit code 2.
class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

}  // namespace cusprune
