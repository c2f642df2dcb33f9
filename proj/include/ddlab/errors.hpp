#pragma once

#include <stdexcept>
#include <string>

namespace ddlab {

// Raised when a computation produces NaN/inf where finite values are required
// (training divergence, bad logits).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A checkpoint or state file does not match the configuration it is used with.
class IncompatibleArtifact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ddlab
