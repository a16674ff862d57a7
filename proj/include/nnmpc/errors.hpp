#pragma once

#include <stdexcept>
#include <string>

namespace nnmpc {

// Bad user input: malformed config, inconsistent dimensions in files, unknown keys.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A numerical stage failed: solver did not converge, training diverged,
// too many failed solves during dataset generation.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// The requested error level cannot be certified from this dataset
// (training-set error already exceeds the target).
struct BoundInfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace nnmpc
