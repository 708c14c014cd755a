#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace hiermarket {

// Base of every library error; lets callers catch model failures separately
// from std::bad_alloc and friends.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

// Bad input data, e.g. a zero-variance column.
class DataError : public Error {
 public:
  using Error::Error;
};

class SingularDataError : public DataError {
 public:
  using DataError::DataError;
};

class UndefinedVarianceError : public DataError {
 public:
  using DataError::DataError;
};

class SampleSizeError : public DataError {
 public:
  using DataError::DataError;
};

class IdentifiabilityError : public Error {
 public:
  IdentifiabilityError(const std::string& what, std::vector<std::string> regressors,
                       std::vector<std::string> blocks)
      : Error(what), regressors_(std::move(regressors)), blocks_(std::move(blocks)) {}

  const std::vector<std::string>& regressors() const noexcept { return regressors_; }
  const std::vector<std::string>& blocks() const noexcept { return blocks_; }

 private:
  std::vector<std::string> regressors_;
  std::vector<std::string> blocks_;
};

// Configuration problem. line == 0 means "not tied to a source line".
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what, int line = 0)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

// CSV or panel parse failure; row/column are 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t row, std::size_t column)
      : Error(what), row_(row), column_(column) {}

  std::size_t row() const noexcept { return row_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

}  // namespace hiermarket
