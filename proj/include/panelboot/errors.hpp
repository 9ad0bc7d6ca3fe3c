#pragma once

#include <stdexcept>
#include <string>

namespace panelboot {

// Base of every error the library throws. The CLI maps the subclasses onto
// exit codes: UsageError -> 1, NumericalError -> 2, DataError -> 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad parameters or configuration supplied by the caller.
class UsageError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input data, or I/O failure.
class DataError : public Error {
 public:
  using Error::Error;
};

// A numerical procedure could not produce a valid result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

// Non-finite log-likelihood or derivative at observation (stratum, period).
class NonFiniteError : public NumericalError {
 public:
  NonFiniteError(std::size_t stratum, std::size_t period, const std::string& what)
      : NumericalError(what + " at stratum " + std::to_string(stratum) + ", period " +
                       std::to_string(period)),
        stratum_(stratum),
        period_(period) {}
  std::size_t stratum() const { return stratum_; }
  std::size_t period() const { return period_; }

 private:
  std::size_t stratum_;
  std::size_t period_;
};

}  // namespace panelboot
