#pragma once

#include <stdexcept>
#include <string>

namespace ddsde {

// Input outside the mathematical domain of an operation (H outside (0,1), negative times, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Caller violated a structural precondition (dimension mismatch, empty measure, ...).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Instance too large for the requested exact method.
class ResourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite state, failed factorization, extrapolation outside a table.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or incomplete experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Output path missing or not writable.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

template <class E>
inline void require(bool cond, const std::string& msg) {
  if (!cond) throw E(msg);
}

}  // namespace detail
}  // namespace ddsde
