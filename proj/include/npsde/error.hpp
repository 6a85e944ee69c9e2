#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace npsde {

// Bad arguments, malformed files, shape mismatches.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Factorization failures and other conditioning problems.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised when a simulated path leaves the admissible state range.
class SimulationError : public NumericalError {
 public:
  SimulationError(const std::string& what, std::size_t step, std::size_t sample = 0)
      : NumericalError(what + " (sample " + std::to_string(sample) + ", step " +
                       std::to_string(step) + ")"),
        step_(step),
        sample_(sample) {}

  std::size_t step() const noexcept { return step_; }
  std::size_t sample() const noexcept { return sample_; }

 private:
  std::size_t step_;
  std::size_t sample_;
};

class SensitivityError : public SimulationError {
 public:
  using SimulationError::SimulationError;
};

class FitError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// Parse failure in an input file; carries file name and 1-based line.
class ParseError : public InputError {
 public:
  ParseError(const std::string& file, std::size_t line, const std::string& what)
      : InputError(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}

  const std::string& file() const noexcept { return file_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

}  // namespace npsde
