#pragma once

#include <stdexcept>
#include <string>

namespace vfmap {

/// Malformed input record. The message names the offending line.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : std::runtime_error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Inconsistent field dimensions (grids, steps, point sets).
class ShapeError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or configuration value.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Failed numerical procedure (non-convergence, singular system).
class NumericError : public std::runtime_error {
public:
  explicit NumericError(const std::string& what, double residual = 0.0)
      : std::runtime_error(what), residual_(residual) {}
  double residual() const noexcept { return residual_; }

private:
  double residual_;
};

} // namespace vfmap
