#pragma once

#include <stdexcept>
#include <string>

namespace scattnet {

// Shape/precondition violations in tensor ops and model assembly.
class ContractError : public std::invalid_argument {
 public:
  explicit ContractError(const std::string& what)
      : std::invalid_argument(what) {}
};

// Problems with input files: missing rasters, bad palettes, corrupt
// checkpoints.
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where finite ones are required (loss, gradients,
// activations).
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace scattnet
