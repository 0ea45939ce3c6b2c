#pragma once

#include <stdexcept>
#include <string>

namespace medic {

/// Bad input supplied by the caller: malformed files, unknown columns,
/// invalid arguments. The CLI maps it to exit code 2.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Failure while fitting a model (non-finite loss, empty split, ...).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace medic
