#pragma once

#include <stdexcept>
#include <string>

namespace radgen {

// Tensor shapes or model dimensions do not agree.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A configuration value violates its invariants.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed input file or record. Carries a 1-based line number when known.
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what, long line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

}  // namespace radgen
