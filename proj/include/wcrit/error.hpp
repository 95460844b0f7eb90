#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace wcrit {

/// Invalid construction parameters (MDP, config values, bounds).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// API misuse: mismatched shapes, stale caches, out-of-range arguments.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// A non-finite value appeared during numerical integration or training.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Malformed key=value text. Carries the 1-based line number (0 when not tied to a line).
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace wcrit
