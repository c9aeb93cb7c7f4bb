#pragma once

#include <stdexcept>
#include <string>

namespace pcqa {

// Raised when user-supplied input (files, manifests, flags) fails validation.
// The CLI maps this to exit code 2; internal contract violations use the
// standard logic/runtime errors and map to exit code 1.
struct InputError : std::runtime_error {
  explicit InputError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace pcqa
