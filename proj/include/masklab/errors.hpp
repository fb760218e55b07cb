#pragma once

#include <stdexcept>
#include <string>

namespace masklab {

// Malformed arguments: non-stochastic rows, bad shapes, out-of-range parameters.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The problem instance violates a structural requirement (e.g. a state with no
// valid action, a state space too large to enumerate).
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse, such as stepping an environment after the episode ended.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Numerical blow-up detected (logit overflow, NaN loss).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Config or data file does not match its expected schema.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace masklab
