#pragma once

#include <stdexcept>
#include <string>

namespace mtm {

// Incompatible tensor or image dimensions.
struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A precondition stated by an operation was violated by the caller.
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Non-finite values where finite ones are required.
struct NumericError : std::domain_error {
  using std::domain_error::domain_error;
};

// Malformed configuration, checkpoint or data files.
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mtm
