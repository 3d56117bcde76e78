#pragma once

#include <stdexcept>
#include <string>

namespace cvbell {

// Violated input contract: bad parameters, grid mismatch, state off the grid.
class PreconditionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computed quantity failed a numerical sanity guard.
class NumericalGuardError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw PreconditionError(message);
}

}  // namespace cvbell
