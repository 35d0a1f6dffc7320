#pragma once

#include <stdexcept>
#include <string>

namespace cohar {

// Base of every error the library throws. The CLI maps each subclass onto an
// exit code, so new failure kinds should derive from one of these.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class GeometryError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& where, std::size_t line, const std::string& what)
      : DataError(where + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// Loss became NaN/Inf during training.
class TrainingError : public Error {
 public:
  TrainingError(std::size_t epoch, const std::string& what)
      : Error("epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}
  std::size_t epoch() const noexcept { return epoch_; }

 private:
  std::size_t epoch_;
};

}  // namespace cohar
