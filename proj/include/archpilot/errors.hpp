#pragma once

#include <stdexcept>
#include <string>

namespace archpilot {

// Input violates a documented constraint (shape, spec, schema, value range).
class ValidationError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// A count would not fit in 64 bits.
class OverflowError : public std::overflow_error {
public:
  using std::overflow_error::overflow_error;
};

// Malformed input document; carries the 1-based line/column of the failure.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : std::runtime_error(what), line_(line), column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace archpilot
