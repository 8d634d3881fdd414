#pragma once

#include <stdexcept>
#include <string>

namespace cxrhier {

/// Raised for invalid inputs: malformed files, violated preconditions,
/// degenerate data that a statistic is undefined on.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cxrhier
