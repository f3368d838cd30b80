#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace set2set {

// Base of every error thrown by the library. The CLI maps ConfigError and
// data errors to exit code 2, everything else to 3.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
public:
  using Error::Error;
};

class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class EmptyDatasetError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

class FormatError : public Error {
public:
  using Error::Error;
};

class IndexError : public Error {
public:
  using Error::Error;
};

// Raised when a user has interacted with every item, so no unobserved
// item can be drawn.
class DegenerateUserError : public Error {
public:
  explicit DegenerateUserError(std::size_t user)
      : Error("user " + std::to_string(user) + " has no unobserved items"), user_(user) {}

  std::size_t user() const noexcept { return user_; }

private:
  std::size_t user_;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class NumericError : public Error {
public:
  NumericError(const std::string& term, const std::string& what)
      : Error(term + ": " + what), term_(term) {}

  const std::string& term() const noexcept { return term_; }

private:
  std::string term_;
};

class TrainingDivergedError : public Error {
public:
  explicit TrainingDivergedError(std::size_t epoch)
      : Error("training diverged at epoch " + std::to_string(epoch)), epoch_(epoch) {}

  std::size_t epoch() const noexcept { return epoch_; }

private:
  std::size_t epoch_;
};

class CheckpointError : public Error {
public:
  using Error::Error;
};

class EvalError : public Error {
public:
  using Error::Error;
};

}  // namespace set2set
