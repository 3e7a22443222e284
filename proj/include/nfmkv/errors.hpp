#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace nfmkv {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition violations and malformed user input.
class InvalidInput : public Error {
 public:
  using Error::Error;
};

// Non-finite intermediate values, failed inversions.
class NumericError : public Error {
 public:
  using Error::Error;
};

class DivergedSimulation : public NumericError {
 public:
  DivergedSimulation(std::size_t step, std::size_t sample, double value)
      : NumericError("simulation diverged at step " + std::to_string(step) + ", sample " +
                     std::to_string(sample) + " (|x| = " + std::to_string(value) + ")"),
        step_(step),
        sample_(sample) {}

  std::size_t step() const noexcept { return step_; }
  std::size_t sample() const noexcept { return sample_; }

 private:
  std::size_t step_;
  std::size_t sample_;
};

class IterationFailure : public Error {
 public:
  IterationFailure(const std::string& what, std::vector<double> residuals)
      : Error(what), residuals_(std::move(residuals)) {}

  const std::vector<double>& residuals() const noexcept { return residuals_; }

 private:
  std::vector<double> residuals_;
};

class ParseError : public Error {
 public:
  ParseError(std::string field, const std::string& what)
      : Error("parse error at '" + field + "': " + what), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

class UnsupportedVersion : public ParseError {
 public:
  explicit UnsupportedVersion(const std::string& found)
      : ParseError("version", "unsupported format version '" + found + "'") {}
};

class TrainingFailure : public Error {
 public:
  TrainingFailure(const std::string& what, std::string checkpoint)
      : Error(what + (checkpoint.empty() ? std::string{} : " (last checkpoint: " + checkpoint + ")")),
        checkpoint_(std::move(checkpoint)) {}

  const std::string& checkpoint() const noexcept { return checkpoint_; }

 private:
  std::string checkpoint_;
};

}  // namespace nfmkv
