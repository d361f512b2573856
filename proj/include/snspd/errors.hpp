#pragma once

#include <stdexcept>
#include <string>

namespace snspd {

/// Bad input: rejected parameters, malformed files, unknown config keys.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what) : std::invalid_argument(what) {}
};

/// A computation that could not produce a trustworthy result
/// (singular system, too little data for a fit, ...).
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace snspd
