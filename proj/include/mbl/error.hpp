#pragma once

#include <stdexcept>
#include <string>

namespace mbl {

/// Raised when an operation is called outside its mathematical domain
/// (empty index set, dimension mismatch, step length outside an interval).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised before any work starts when a configuration cannot be honored.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace mbl
