#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gtep {

// Argument validation failures throw std::invalid_argument. The types below
// cover the remaining failure classes so callers (and the CLI) can tell them apart.

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input. line() is 1-based and counts the header.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  LengthError(std::size_t expected, std::size_t actual)
      : Error("model file length mismatch: expected " + std::to_string(expected) +
              " bytes, got " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}
  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

// A metric whose denominator vanishes (constant series, zero actuals, ...).
class UndefinedMetric : public Error {
 public:
  using Error::Error;
};

class InvalidState : public Error {
 public:
  using Error::Error;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(std::size_t epoch, std::size_t batch)
      : Error("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
              ", batch " + std::to_string(batch)),
        epoch_(epoch),
        batch_(batch) {}
  std::size_t epoch() const noexcept { return epoch_; }
  std::size_t batch() const noexcept { return batch_; }

 private:
  std::size_t epoch_;
  std::size_t batch_;
};

}  // namespace gtep
