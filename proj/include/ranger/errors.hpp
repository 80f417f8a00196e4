#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ranger {

// Base of every error the simulator raises on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Overlapping or otherwise inconsistent region layout.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A well-formed request that the simulated machine cannot honor
// (unknown pool, unresolved reference, unmapped frame, ...).
class SimulationError : public Error {
 public:
  using Error::Error;
};

// Address arithmetic leaving the 48-bit guest-physical space or a page.
class RangeError : public Error {
 public:
  using Error::Error;
};

// Internal protocol misuse, e.g. delivering an MTF exit nobody asked for.
class LogicError : public Error {
 public:
  using Error::Error;
};

// The switch-and-retry loop exceeded its budget: the policy is cycling.
class LivelockError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace ranger
