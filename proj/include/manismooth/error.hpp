#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace manismooth {

// Base of every error thrown by the library. Callers that only care about
// "something was invalid" catch this; the subclasses exist so the CLI can
// report a stable error category.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
  virtual const char* category() const noexcept { return "error"; }
};

// Malformed input text. Carries the 1-based line number when known (0 otherwise).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }
  const char* category() const noexcept override { return "parse"; }

 private:
  std::size_t line_;
};

// Well-formed input that violates a data invariant (range, uniqueness, ...).
class ValidationError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "validation"; }
};

// A numeric quantity is undefined for the given input (zero variance, all ties, ...).
class UndefinedError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "undefined"; }
};

// An iterative method failed to converge.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_gap)
      : Error(what + " (last relative gap " + std::to_string(last_gap) + ")"), gap_(last_gap) {}
  double last_gap() const noexcept { return gap_; }
  const char* category() const noexcept override { return "convergence"; }

 private:
  double gap_;
};

// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch)
      : Error(what + " at epoch " + std::to_string(epoch)), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }
  const char* category() const noexcept override { return "divergence"; }

 private:
  int epoch_;
};

}  // namespace manismooth
